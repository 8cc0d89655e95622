"""First-order optimizers operating on lists of float64 arrays."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError, InvalidInputError


@dataclass
class OptimState:
    method: str = "adam"
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise InvalidConfigError(f"unknown optimizer {self.method!r}")
        if not self.lr > 0:
            raise InvalidConfigError("learning rate must be positive")


def step(state, params, grads):
    """Return updated copies of ``params``; mutates the moment buffers in ``state``."""
    if len(params) != len(grads):
        raise InvalidInputError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise InvalidInputError(f"shape mismatch {np.shape(p)} vs {np.shape(g)}")
    state.step_count += 1
    if state.method == "sgd":
        return [p - state.lr * g for p, g in zip(params, grads)]

    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    t = state.step_count
    c1 = 1.0 - state.b1 ** t
    c2 = 1.0 - state.b2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.b1 * state.m[i] + (1.0 - state.b1) * g
        state.v[i] = state.b2 * state.v[i] + (1.0 - state.b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps_adam))
    return out
