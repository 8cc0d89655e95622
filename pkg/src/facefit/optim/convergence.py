"""Width sweep of plain gradient descent on an over-parameterized ReLU regression."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .config import ConvergenceConfig


@dataclass
class TrialResult:
    width: int
    seed: int
    success: bool
    steps: int
    final_loss: float
    initial_loss: float
    decrease_fraction: float   # share of consecutive checkpoints with strictly lower loss
    diverged: bool


def make_data(cfg):
    """Inputs in [0, 1]^d_in with unit norm; targets with unit-scale norm."""
    rng = np.random.default_rng(cfg.data_seed)
    x = np.abs(rng.normal(size=(cfg.n, cfg.d_in)))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = rng.normal(size=(cfg.n, cfg.d_out)) / np.sqrt(cfg.d_out)
    return x, y


def init_layers(seed, d_in, d_out, width, depth):
    """Bias-free weights; hidden entries ~ N(0, 2/rows), output entries ~ N(0, 1/rows)."""
    rng = np.random.default_rng(seed)
    sizes = [d_in] + [width] * (depth - 1) + [d_out]
    out = []
    for l in range(depth):
        rows, cols = sizes[l + 1], sizes[l]
        var = (1.0 if l == depth - 1 else 2.0) / rows
        out.append(np.ascontiguousarray(rng.normal(0.0, np.sqrt(var), size=(rows, cols))))
    return out


def run_trial(cfg, width, seed, x=None, y=None):
    if x is None:
        x, y = make_data(cfg)
    layers = init_layers(seed, cfg.d_in, cfg.d_out, width, cfg.depth)
    steps, loss, trace = kernels.mlp_gd(layers, x, y, cfg.lr_scale / width, cfg.max_steps,
                                        cfg.eps, cfg.record_every)
    diffs = np.diff(trace)
    frac = float(np.mean(diffs < 0)) if len(diffs) else 1.0
    return TrialResult(width, seed, bool(loss <= cfg.eps), int(steps), float(loss), float(trace[0]),
                       frac, not np.isfinite(loss))


def run_convergence_experiment(cfg=None):
    """Success table per width: rate, median steps to eps, divergences, checkpoint monotonicity."""
    cfg = (cfg or ConvergenceConfig()).validate()
    x, y = make_data(cfg)
    table = []
    trials = []
    for m in cfg.widths:
        t0 = time.perf_counter()
        rows = [run_trial(cfg, m, s, x, y) for s in cfg.seeds]
        trials.extend(rows)
        ok = [r for r in rows if r.success]
        table.append({
            "width": m,
            "lr": cfg.lr_scale / m,
            "trials": len(rows),
            "success_rate": len(ok) / len(rows),
            "median_steps": float(np.median([r.steps for r in ok])) if ok else None,
            "diverged": sum(r.diverged for r in rows),
            "decrease_fraction": float(np.mean([r.decrease_fraction for r in rows])),
            "seconds": time.perf_counter() - t0,
        })
    return table, trials


def count_inversions(rates):
    """Number of adjacent decreases in a success-rate sequence."""
    return int(sum(b < a for a, b in zip(rates, rates[1:])))
