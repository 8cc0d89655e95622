"""Latent target construction: smoothed head orientations and multi-view target meshes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diff.core import value_of
from .errors import DegenerateWindowError, InvalidConfigError, InvalidInputError, InvariantViolation
from .face_model import FaceParams, skin_canonical
from .geometry import DEFAULT_EPS_VIS, VIEW_DIR, axis_angle_to_quat, hemisphere_align, vertex_normals, visibility_weights
from .diff import ops

DEFAULT_WINDOW = 5


@dataclass
class LatentTargets:
    q_hat: np.ndarray          # (N_F, N_V, 4)
    m_hat: np.ndarray          # (N_F, N_M, 3), canonical frame
    weights_used: np.ndarray   # (N_F, N_V, N_M)


def smooth_quaternions(q, window=DEFAULT_WINDOW):
    """Centered moving average of unit quaternions along axis 0.

    Consecutive quaternions are sign-aligned first; windows shrink at the
    sequence ends. Extra trailing axes (e.g. views) are smoothed independently.
    """
    if window < 1 or window % 2 == 0:
        raise InvalidConfigError("window must be a positive odd integer")
    q = np.array(q, dtype=np.float64)
    if q.ndim < 2 or q.shape[-1] != 4 or q.shape[0] < 1:
        raise InvalidInputError("expected a (N_F, ..., 4) quaternion sequence")
    for f in range(1, len(q)):
        dots = np.sum(q[f] * q[f - 1], axis=-1)
        q[f][dots < 0] *= -1.0
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + q.shape[1:]), np.cumsum(q, axis=0)])
    n = len(q)
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    avg = (csum[hi] - csum[lo]) / (hi - lo).reshape((-1,) + (1,) * (q.ndim - 1))
    length = np.linalg.norm(avg, axis=-1, keepdims=True)
    if np.any(length < 1e-6):
        raise DegenerateWindowError("quaternion window average collapsed to zero")
    return hemisphere_align(avg / length)


def bootstrap_target_mesh(canonical_vertices, weights):
    """Confidence-weighted average over views (axis -3) of canonical vertices.

    ``canonical_vertices`` is (..., N_V, N_M, 3) and ``weights`` (..., N_V, N_M).
    Written as first view plus weighted deviations so that views which already
    agree reproduce their mesh bit-exactly.
    """
    verts = np.asarray(canonical_vertices, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if verts.shape[:-1] != w.shape or verts.ndim < 3:
        raise InvalidInputError(f"weights {w.shape} do not match meshes {verts.shape}")
    wsum = w.sum(axis=-2)
    if np.any(wsum <= 0):
        raise InvariantViolation("vertex with zero total visibility weight")
    ref = verts[..., :1, :, :]
    dev = np.sum(w[..., None] * (verts - ref), axis=-3) / wsum[..., None]
    return ref[..., 0, :, :] + dev


def canonical_view_dirs(r):
    """Camera viewing direction expressed in each mesh's canonical frame, (..., 3)."""
    R = value_of(ops.rodrigues(np.asarray(r, dtype=np.float64)))
    return np.einsum("...ji,j->...i", R, VIEW_DIR)


def run_estep(params, assets, window=DEFAULT_WINDOW, eps_vis=DEFAULT_EPS_VIS):
    """Latent targets from one snapshot of per frame-view predictions.

    ``params`` holds numpy arrays shaped (N_F, N_V, ...). Returned arrays are
    constants for the following descent step.
    """
    params = params.numpy()
    r = params.r
    if r.ndim != 3:
        raise InvalidInputError("predictions must be shaped (N_F, N_V, ...)")
    q = value_of(axis_angle_to_quat(r))
    q_hat = smooth_quaternions(q, window)
    # same rotation either way; pick the sign facing each prediction
    q_hat[np.einsum("...c,...c->...", q, q_hat) < 0] *= -1.0
    canon = value_of(skin_canonical(assets, params).vertices)
    normals = vertex_normals(canon, assets.faces)
    view = canonical_view_dirs(r)
    w = visibility_weights(normals, view[..., None, :], eps_vis)
    m_hat = bootstrap_target_mesh(canon, w)
    return LatentTargets(q_hat, m_hat, w)
