"""Central finite-difference validation of recorded gradients."""
import numpy as np

from .core import Tape, grad


def _evaluate(f, arrays):
    tape = Tape()
    out = f(*[tape.var(a) for a in arrays])
    return float(np.asarray(getattr(out, "value", out)))


def grad_check(f, point, h=1e-6, analytic=None):
    """Max relative error between tape gradients and central differences.

    ``f`` takes one Var per entry of ``point`` and returns a scalar Var.
    ``analytic`` overrides the tape gradients (used to check that the
    detector catches a corrupted gradient). Relative error per coordinate is
    ``|ga - gfd| / max(1e-8, |ga| + |gfd|)``.
    """
    single = isinstance(point, np.ndarray) or np.isscalar(point)
    arrays = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]
    if analytic is None:
        tape = Tape()
        xs = [tape.var(a) for a in arrays]
        analytic = grad(tape, f(*xs), xs)
    elif single:
        analytic = [analytic]
    worst = 0.0
    for k, base in enumerate(arrays):
        ga = np.asarray(analytic[k], dtype=np.float64).reshape(base.shape)
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = _evaluate(f, arrays)
            flat[j] = orig - h
            fm = _evaluate(f, arrays)
            flat[j] = orig
            gfd = (fp - fm) / (2 * h)
            g = ga.reshape(-1)[j]
            err = abs(g - gfd) / max(1e-8, abs(g) + abs(gfd))
            worst = max(worst, err)
    return worst
