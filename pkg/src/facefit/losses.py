"""Objective terms for re-parameterized and direct fitting.

Batched inputs carry leading frame/view dimensions; every term averages over
those frame-views. Latent targets (``q_hat``, ``m_hat``) are plain arrays and
therefore constants on the tape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diff import ops
from .diff.core import value_of
from .errors import InvalidConfigError, InvalidInputError
from .geometry import project

ROUNDOFF_RTOL = 1e-12


@dataclass
class LossWeights:
    lam_temp: float = 100.0   # l2d is in pixels summed over landmarks; quaternion gaps are ~1e-2
    lam_view: float = 1.0
    lam_r: float = 1.0
    lam_theta: float = 1.0
    lam_beta: float = 1.0
    lam_psi: float = 1.0

    def validate(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise InvalidConfigError(f"loss weight {k} must be finite and >= 0, got {v}")
        return self


def _n_frame_views(shape, trailing):
    lead = shape[:len(shape) - trailing]
    return int(np.prod(lead)) if lead else 1


def l2d(landmarks3d, cams, observed2d, per_landmark=False):
    """Mean over frame-views of the L1 reprojection error summed over landmarks."""
    obs = np.asarray(observed2d, dtype=np.float64)
    pred = project(landmarks3d, cams)
    if np.shape(value_of(pred)) != obs.shape:
        raise InvalidInputError(f"prediction {np.shape(value_of(pred))} vs observation {obs.shape}")
    if not np.all(np.isfinite(obs)):
        raise InvalidInputError("missing observation; mask frame-views before fitting")
    resid = ops.sub(pred, obs)
    # residuals at round-off level count as exact zeros; their L1 subgradient
    # would otherwise be a full-size sign that Adam turns into a real step
    exact = np.abs(value_of(resid)) <= ROUNDOFF_RTOL * (1.0 + np.abs(obs))
    if np.any(exact):
        resid = ops.mul(resid, (~exact).astype(np.float64))
    total = ops.sum(ops.absolute(resid))
    denom = _n_frame_views(obs.shape, 2)
    if per_landmark:
        denom *= obs.shape[-2]
    return ops.mul(total, 1.0 / denom)


def l_temporal(q, q_hat, squared=False):
    """Mean over frame-views of ||q - q_hat||_2 (or its square)."""
    qv = value_of(q)
    qh = np.asarray(q_hat, dtype=np.float64)
    if qv.shape != qh.shape or qv.shape[-1] != 4:
        raise InvalidInputError("quaternion batches must match and end in 4")
    if np.any(np.einsum("...c,...c->...", qv, qh) < 0):
        raise InvalidInputError("quaternions are not hemisphere-aligned with their targets")
    diff = ops.sub(q, qh)
    per = ops.sum(ops.square(diff), axis=-1) if squared else ops.norm(diff, axis=-1)
    return ops.mul(ops.sum(per), 1.0 / _n_frame_views(qv.shape, 1))


def l_multiview(canonical_vertices, target_vertices):
    """Mean over frame-views of the L1 distance to the per-frame target mesh.

    ``canonical_vertices`` is (N_F, N_V, N_M, 3), ``target_vertices`` (N_F, N_M, 3).
    """
    cv = value_of(canonical_vertices)
    tv = np.asarray(target_vertices, dtype=np.float64)
    if cv.ndim != 4 or tv.ndim != 3 or cv.shape[0] != tv.shape[0] or cv.shape[2:] != tv.shape[1:]:
        raise InvalidInputError(f"mesh shapes {cv.shape} and {tv.shape} are incompatible")
    total = ops.sum(ops.absolute(ops.sub(canonical_vertices, tv[:, None])))
    return ops.mul(total, 1.0 / (cv.shape[0] * cv.shape[1]))


def baseline_regularizers(params, weights):
    """Weighted squared L2 norms of r, theta, beta, psi, averaged over frame-views."""
    weights.validate()
    n = _n_frame_views(np.shape(value_of(params.r)), 1)
    total = 0.0
    for lam, x in ((weights.lam_r, params.r), (weights.lam_theta, params.theta),
                   (weights.lam_beta, params.beta), (weights.lam_psi, params.psi)):
        if lam:
            total = ops.add(total, ops.mul(ops.sum(ops.square(x)), lam))
    return ops.mul(total, 1.0 / n)


def _point_mean_distance(pred, ref):
    pv, rv = value_of(pred), np.asarray(value_of(ref))
    if pv.shape != rv.shape:
        raise InvalidInputError(f"point counts differ: {pv.shape} vs {rv.shape}")
    d = ops.norm(ops.sub(pred, ref), axis=-1)
    return ops.mul(ops.sum(d), 1.0 / int(np.prod(pv.shape[:-1])))


def l3d_vertex(pred_vertices, ref_vertices):
    """Mean per-vertex Euclidean distance."""
    return _point_mean_distance(pred_vertices, ref_vertices)


def l3d_landmark(pred_landmarks, ref_landmarks):
    """Mean per-landmark Euclidean distance."""
    return _point_mean_distance(pred_landmarks, ref_landmarks)


def total_objective(mode, parts, weights):
    """Weighted sum of the terms in ``parts`` (keys: l2d, temporal, multiview, reg).

    ``neuface`` mode ignores ``reg``; ``baseline`` adds it (already weighted).
    Missing parts count as zero.
    """
    weights.validate()
    if mode not in ("neuface", "baseline"):
        raise InvalidConfigError(f"unknown objective mode {mode!r}")
    total = parts.get("l2d", 0.0)
    if "temporal" in parts and weights.lam_temp:
        total = ops.add(total, ops.mul(parts["temporal"], weights.lam_temp))
    if "multiview" in parts and weights.lam_view:
        total = ops.add(total, ops.mul(parts["multiview"], weights.lam_view))
    if mode == "baseline" and "reg" in parts:
        total = ops.add(total, parts["reg"])
    return total
