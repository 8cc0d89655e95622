"""Configuration and result records for the fitting drivers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidConfigError
from ..estep import DEFAULT_WINDOW
from ..geometry import DEFAULT_EPS_VIS
from ..losses import LossWeights


@dataclass
class OptimConfig:
    max_iters: int = 300
    lr: float = 1e-4
    optimizer: str = "adam"
    weights: LossWeights = field(default_factory=LossWeights)
    window: int = DEFAULT_WINDOW
    eps_vis: float = DEFAULT_EPS_VIS
    tol: float = 1e-5
    patience: int = 10
    seed: int = 0
    stage_split: float = 0.3      # direct fitting: share of iterations for the rigid stage
    tie_beta: bool = False         # direct fitting: one beta per sequence
    squared_temporal: bool = False
    per_landmark_l2d: bool = False

    def validate(self):
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidConfigError("tol must be positive")
        if not self.lr > 0:
            raise InvalidConfigError("lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidConfigError("window must be a positive odd integer")
        if not 0 < self.eps_vis < 1:
            raise InvalidConfigError("eps_vis must lie in (0, 1)")
        if not 0 < self.stage_split < 1:
            raise InvalidConfigError("stage_split must lie in (0, 1)")
        self.weights.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys {sorted(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            try:
                d["weights"] = LossWeights(**d["weights"])
            except TypeError as exc:
                raise InvalidConfigError(str(exc)) from None
        return cls(**d).validate()

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return OptimConfig.from_dict(d)


def neural_defaults(**changes):
    return OptimConfig(lr=1e-4, max_iters=300).replace(**changes)


def direct_defaults(**changes):
    return OptimConfig(lr=1e-2, max_iters=300).replace(**changes)


@dataclass
class FitResult:
    params: object              # FaceParams, arrays (N_F, N_V, ...)
    cams: object                # CameraParams, arrays (N_F, N_V)
    history: dict               # term -> list per iteration
    iterations: int
    termination: str
    weights: object = None      # EncoderWeights for the neural driver
    stages: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.history["total"][-1]

    def to_dict(self, config=None, seed=None):
        from ..pipeline.data import SCHEMA_VERSION, _cams_to_dict, _params_to_dict
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "fit",
            "params": _params_to_dict(self.params),
            "cameras": _cams_to_dict(self.cams),
            "history": {k: [float(v) for v in vals] for k, vals in self.history.items()},
            "iterations": self.iterations,
            "termination": self.termination,
            "stages": self.stages,
            "config": config,
            "seed": seed,
        }


@dataclass
class ConvergenceConfig:
    widths: list = field(default_factory=lambda: [8, 32, 128, 512])
    depth: int = 3
    n: int = 16
    d_in: int = 8
    d_out: int = 4
    lr_scale: float = 0.5           # learning rate = lr_scale / m
    eps: float = 1e-3
    max_steps: int = 50_000
    seeds: list = field(default_factory=lambda: list(range(20)))
    data_seed: int = 1234
    record_every: int = 50

    def validate(self):
        if any(m < self.d_out for m in self.widths):
            raise InvalidConfigError("every width must be >= d_out")
        if not 0 < self.eps <= 1:
            raise InvalidConfigError("eps must lie in (0, 1]")
        if self.depth < 2 or self.n < 1 or self.max_steps < 1:
            raise InvalidConfigError("invalid depth, sample count or step budget")
        if not self.lr_scale > 0:
            raise InvalidConfigError("lr_scale must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d).validate()


def as_history(terms):
    return {k: [] for k in terms}


def finite_or_raise(value, iteration):
    from ..errors import DivergenceError
    if not np.isfinite(value):
        raise DivergenceError(iteration)
