"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every primitive accepts either a :class:`Var` or a plain array. When no
argument is a ``Var`` the primitive just evaluates with numpy, so model and
loss code runs unchanged on constants. Arrays mixed into a recorded
computation are treated as constants, which is how latent targets are
gradient-stopped.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

__all__ = [
    "Tape", "Var", "grad", "value_of", "is_var",
    "add", "sub", "mul", "div", "neg", "square", "sqrt", "absolute",
    "relu", "softplus", "matmul", "einsum", "sum", "mean", "reshape",
    "getitem", "concat", "stack", "norm", "rodrigues", "axis_angle_quat",
]


class _Node:
    __slots__ = ("kind", "value", "parents", "vjp")

    def __init__(self, kind, value, parents, vjp):
        self.kind = kind
        self.value = value
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of primitive evaluations.

    Inputs always precede outputs, so the reverse insertion order is a
    valid topological order for the backward pass.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def var(self, value):
        """Register a leaf (a differentiable input) on this tape."""
        arr = np.array(value, dtype=np.float64)
        return self._push("leaf", arr, (), None)

    def _push(self, kind, value, parents, vjp):
        self.nodes.append(_Node(kind, value, parents, vjp))
        return Var(self, len(self.nodes) - 1)


class Var:
    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return einsum("...ij->...ji", self)

    def __repr__(self):
        return f"Var(shape={self.shape}, kind={self.tape.nodes[self.index].kind!r})"

    def __len__(self):
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def is_var(x):
    return isinstance(x, Var)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise InvalidInputError("operands recorded on different tapes")
    return tape


def _record(kind, value, args, vjp):
    """Push ``value`` if any arg is a Var; ``vjp(g)`` returns one cotangent per arg."""
    tape = _tape_of(args)
    if tape is None:
        return value
    live = tuple(i for i, a in enumerate(args) if isinstance(a, Var))
    parents = tuple(args[i].index for i in live)

    def node_vjp(g):
        gs = vjp(g)
        return tuple(gs[i] for i in live)

    return tape._push(kind, value, parents, node_vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("add", av + bv, (a, b),
                   lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("sub", av - bv, (a, b),
                   lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("mul", av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape),
                              _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _record("neg", -value_of(a), (a,), lambda g: (-g,))


def square(a):
    av = value_of(a)
    return _record("square", av * av, (a,), lambda g: (2.0 * av * g,))


def sqrt(a):
    out = np.sqrt(value_of(a))
    return _record("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def absolute(a):
    av = value_of(a)
    # subgradient 0 at the kink
    return _record("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def relu(a):
    av = value_of(a)
    mask = av > 0
    return _record("relu", np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def softplus(a):
    av = value_of(a)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _record("softplus", np.logaddexp(0.0, av), (a,), lambda g: (g * sig,))


# -- linear algebra and reductions -------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise InvalidInputError("matmul expects operands with ndim >= 2")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record("matmul", np.matmul(av, bv), (a, b), vjp)


def _parse_einsum(spec, nops):
    spec = spec.replace(" ", "")
    lhs, out = spec.split("->")
    ins = lhs.split(",")
    if len(ins) != nops:
        raise InvalidInputError(f"einsum spec {spec!r} expects {len(ins)} operands")
    return ins, out


def einsum(spec, *operands):
    """Differentiable ``np.einsum`` (explicit ``->`` form, optional leading ``...``)."""
    vals = [value_of(o) for o in operands]
    ins, out = _parse_einsum(spec, len(operands))
    res = np.einsum(spec, *vals)

    def vjp(g):
        grads = []
        for k, (sub_k, v_k) in enumerate(zip(ins, vals)):
            if not isinstance(operands[k], Var):
                grads.append(None)
                continue
            others = [ins[j] for j in range(len(ins)) if j != k]
            avail = set(out).union(*others) if others else set(out)
            kept = "".join(c for c in sub_k if c in avail or c == ".")
            kept = kept.replace("...", "\0")
            letters = [c for c in kept if c != "\0"]
            out_k = ("..." if "\0" in kept else "") + "".join(letters)
            gspec = ",".join([out] + others) + "->" + out_k
            gk = np.einsum(gspec, g, *[vals[j] for j in range(len(ins)) if j != k])
            if out_k != sub_k:
                # indices summed only within operand k: broadcast back
                shape = []
                it = iter(gk.shape[gk.ndim - len(letters):])
                lead = gk.shape[:gk.ndim - len(letters)]
                body = sub_k.replace("...", "")
                body_shape = v_k.shape[v_k.ndim - len(body):]
                for c, n in zip(body, body_shape):
                    shape.append(next(it) if c in letters else 1)
                gk = gk.reshape(tuple(lead) + tuple(shape))
                gk = np.broadcast_to(gk, v_k.shape).copy()
            grads.append(_unbroadcast(gk, v_k.shape))
        return grads

    return _record("einsum", res, operands, vjp)


def sum(a, axis=None, keepdims=False):
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _record("sum", np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    if axis is None:
        count = av.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([av.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    av = value_of(a)
    return _record("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def getitem(a, idx):
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _record("getitem", np.array(av[idx], dtype=np.float64), (a,), vjp)


def concat(items, axis=-1):
    vals = [value_of(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _record("concat", out, tuple(items),
                   lambda g: np.split(g, bounds, axis=axis))


def stack(items, axis=0):
    vals = [value_of(x) for x in items]
    out = np.stack(vals, axis=axis)
    n = len(vals)
    return _record("stack", out, tuple(items),
                   lambda g: [np.take(g, i, axis=axis) for i in range(n)])


def norm(a, axis=-1):
    """Euclidean norm along ``axis``; gradient 0 where the norm vanishes."""
    av = value_of(a)
    n = np.sqrt(np.sum(av * av, axis=axis))

    def vjp(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * av,)

    return _record("norm", n, (a,), vjp)


# -- rotations ---------------------------------------------------------------

def _skew(v):
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([z, -w, y], -1),
        np.stack([w, z, -x], -1),
        np.stack([-y, x, z], -1),
    ], -2)


_SMALL = 1e-4
_GENERATORS = _skew(np.eye(3))  # [e_i]_x for i = 0, 1, 2


def _rodrigues_coeffs(t):
    """a = sin(th)/th, b = (1-cos th)/th^2 and their t-derivatives, t = th^2."""
    th = np.sqrt(t)
    small = t < _SMALL
    ths = np.where(small, 1.0, th)
    s, c = np.sin(ths), np.cos(ths)
    a = np.where(small, 1 - t / 6 + t * t / 120, s / ths)
    b = np.where(small, 0.5 - t / 24 + t * t / 720, (1 - c) / ths**2)
    da = np.where(small, -1 / 6 + t / 60 - t * t / 2520,
                  (ths * c - s) / (2 * ths**3))
    db = np.where(small, -1 / 24 + t / 360 - t * t / 13440,
                  (ths * s - 2 * (1 - c)) / (2 * ths**4))
    return a, b, da, db


def rodrigues(r):
    """Rotation matrices (..., 3, 3) from axis-angle vectors (..., 3)."""
    rv = value_of(r)
    t = np.sum(rv * rv, axis=-1)
    a, b, da, db = _rodrigues_coeffs(t)
    K = _skew(rv)
    K2 = K @ K
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2

    def vjp(g):
        out = np.empty_like(rv)
        for i in range(3):
            E = _GENERATORS[i]
            ri = rv[..., i][..., None, None]
            dR = (2 * ri * da[..., None, None] * K + a[..., None, None] * E
                  + 2 * ri * db[..., None, None] * K2
                  + b[..., None, None] * (E @ K + K @ E))
            out[..., i] = np.sum(g * dR, axis=(-1, -2))
        return (out,)

    return _record("rodrigues", R, (r,), vjp)


def axis_angle_quat(r):
    """Unit quaternions (w, x, y, z) from axis-angle, hemisphere-aligned to w >= 0."""
    rv = value_of(r)
    t = np.sum(rv * rv, axis=-1)
    th = np.sqrt(t)
    small = t < _SMALL
    ths = np.where(small, 1.0, th)
    half_s, half_c = np.sin(ths / 2), np.cos(ths / 2)
    c = np.where(small, 1 - t / 8 + t * t / 384, half_c)
    d = np.where(small, 0.5 - t / 48 + t * t / 3840, half_s / ths)
    dc = np.where(small, -1 / 8 + t / 192, -half_s / (4 * ths))
    dd = np.where(small, -1 / 48 + t / 1920,
                  (0.5 * ths * half_c - half_s) / (2 * ths**3))
    sign = np.where(c < 0, -1.0, 1.0)
    q = sign[..., None] * np.concatenate([c[..., None], d[..., None] * rv], axis=-1)

    def vjp(g):
        g = g * sign[..., None]
        gw, gv = g[..., 0], g[..., 1:]
        # d/dr_i: w' = 2 r_i dc ; v_j' = 2 r_i r_j dd + d delta_ij
        coef = gw * dc + dd * np.sum(gv * rv, axis=-1)
        return (2 * coef[..., None] * rv + d[..., None] * gv,)

    return _record("axis_angle_quat", q, (r,), vjp)


# -- backward ----------------------------------------------------------------

def grad(tape, loss, wrt):
    """Reverse-mode gradients of scalar ``loss`` w.r.t. each Var in ``wrt``.

    Cotangents are accumulated in reverse insertion order, so repeated calls
    on the same tape are bit-identical. A single Var returns a single array.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise InvalidInputError("loss must be a Var recorded on this tape")
    if loss.value.size != 1:
        raise InvalidInputError(f"loss must be scalar, got shape {loss.shape}")
    single = isinstance(wrt, Var)
    targets = [wrt] if single else list(wrt)
    cot = [None] * len(tape.nodes)
    cot[loss.index] = np.ones_like(loss.value)
    keep = {w.index for w in targets}
    for i in range(loss.index, -1, -1):
        g = cot[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None:
                continue
            cot[p] = gp if cot[p] is None else cot[p] + gp
        if i not in keep:
            cot[i] = None
    out = []
    for w in targets:
        g = cot[w.index]
        out.append(np.zeros_like(w.value) if g is None else np.asarray(g, dtype=np.float64).reshape(w.shape))
    return out[0] if single else out
