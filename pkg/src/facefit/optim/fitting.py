"""Alternating latent-target / descent drivers for encoder and direct parameter fitting."""
from __future__ import annotations

import numpy as np

from ..diff import OptimState, Tape, grad, ops, step
from ..diff.core import value_of
from ..encoder import EncoderWeights, denormalize_camera, normalize_landmarks, raw_forward, split_output
from ..errors import InvalidInputError
from ..estep import run_estep
from ..face_model import FaceParams, embed_landmarks, unposed_vertices
from ..geometry import CameraParams
from ..losses import baseline_regularizers, l2d, l_multiview, l_temporal, total_objective
from .config import FitResult, as_history, finite_or_raise

TERMS = ("total", "l2d", "temporal", "multiview", "reg")
MIN_SCALE = 1e-3


def _check_obs(obs, assets):
    if not np.all(obs.valid):
        raise InvalidInputError("observation set has invalid frame-views; mask before fitting")
    if obs.landmarks.shape[2] != assets.n_landmarks:
        raise InvalidInputError("landmark count does not match the face model")


def _reshape_params(params, lead):
    return FaceParams(*(ops.reshape(v, lead + np.shape(value_of(v))[-1:])
                        for v in (params.r, params.theta, params.beta, params.psi)))


def _reshape_cams(cams, lead):
    return CameraParams(*(ops.reshape(v, lead) for v in (cams.s, cams.tx, cams.ty)))


def objective(assets, params, cams, observed, targets, cfg, mode):
    """Recorded objective terms for (N_F, N_V)-batched params; returns (total, parts)."""
    local = unposed_vertices(assets, params)
    posed = ops.einsum("...ij,...nj->...ni", ops.rodrigues(params.r), local)
    parts = {"l2d": l2d(embed_landmarks(assets, posed), cams, observed, cfg.per_landmark_l2d)}
    if targets is not None:
        q = ops.axis_angle_quat(params.r)
        parts["temporal"] = l_temporal(q, targets.q_hat, cfg.squared_temporal)
        parts["multiview"] = l_multiview(local, targets.m_hat)
    if mode == "baseline":
        parts["reg"] = baseline_regularizers(params, cfg.weights)
    return total_objective(mode, parts, cfg.weights), parts


def _needs_targets(cfg):
    return cfg.weights.lam_temp > 0 or cfg.weights.lam_view > 0


def _record(history, total, parts, iteration):
    tv = float(value_of(total))
    finite_or_raise(tv, iteration)
    history["total"].append(tv)
    for k in TERMS[1:]:
        history[k].append(float(value_of(parts[k])) if k in parts else 0.0)
    return tv


class _Stopper:
    def __init__(self, tol, patience):
        self.tol, self.patience = tol, patience
        self.prev = None
        self.calm = 0

    def update(self, value):
        if self.prev is not None:
            rel = abs(value - self.prev) / max(abs(self.prev), 1e-12)
            self.calm = self.calm + 1 if rel < self.tol else 0
        self.prev = value
        return self.calm >= self.patience


def encoder_predict(w, obs, assets):
    """Encoder parameters and pixel cameras for every frame-view, as numpy arrays."""
    lead = obs.landmarks.shape[:2]
    x = normalize_landmarks(obs.landmarks.reshape((-1,) + obs.landmarks.shape[2:]))
    params, cams = split_output(raw_forward(w, x.features), assets.dims)
    cams = denormalize_camera(cams, x)
    params = _reshape_params(params, lead)
    return (FaceParams(*(np.array(value_of(v)) for v in (params.r, params.theta, params.beta, params.psi))),
            CameraParams(*(np.array(value_of(v)).reshape(lead) for v in (cams.s, cams.tx, cams.ty))))


def neuface_fit(obs, assets, w0, cfg):
    """Optimize encoder weights so its per frame-view predictions fit the observations.

    Each iteration predicts all frame-views with the current weights, rebuilds
    the latent targets from that snapshot, and takes one optimizer step on the
    weights. The returned parameters come from one last forward pass.
    """
    cfg.validate()
    _check_obs(obs, assets)
    if w0.d_in != 2 * assets.n_landmarks:
        raise InvalidInputError("encoder input width does not match the landmark count")
    lead = obs.landmarks.shape[:2]
    x = normalize_landmarks(obs.landmarks.reshape((-1,) + obs.landmarks.shape[2:]))
    state = OptimState(cfg.optimizer, lr=cfg.lr)
    history = as_history(TERMS)
    stopper = _Stopper(cfg.tol, cfg.patience)
    flat = [np.array(p) for p in w0.flat()]
    termination = "max_iters"
    use_targets = _needs_targets(cfg)
    for it in range(cfg.max_iters):
        tape = Tape()
        wv = [tape.var(p) for p in flat]
        params, cams = split_output(raw_forward(EncoderWeights.from_flat(wv), x.features), assets.dims)
        params = _reshape_params(params, lead)
        cams = _reshape_cams(denormalize_camera(cams, x), lead)
        targets = run_estep(params, assets, cfg.window, cfg.eps_vis) if use_targets else None
        total, parts = objective(assets, params, cams, obs.landmarks, targets, cfg, "neuface")
        tv = _record(history, total, parts, it)
        if stopper.update(tv):
            termination = "converged"
            break
        if it == cfg.max_iters - 1:
            break
        flat = step(state, flat, grad(tape, total, wv))
    w = EncoderWeights.from_flat(flat, seed=w0.seed)
    params, cams = encoder_predict(w, obs, assets)
    return FitResult(params, cams, history, len(history["total"]), termination, weights=w)


def direct_fit(obs, assets, init_params, init_cams, cfg):
    """Coarse-to-fine fitting of per frame-view parameters with statistical regularizers.

    Stage one moves only head rotation and cameras; stage two freezes cameras
    and moves rotation, pose, shape and expression.
    """
    cfg.validate()
    _check_obs(obs, assets)
    lead = obs.landmarks.shape[:2]
    x = normalize_landmarks(obs.landmarks)
    init_params = init_params.numpy()
    init_cams = init_cams.numpy()
    # cameras are optimized in the normalized landmark frame
    cam_n = np.stack([np.asarray(init_cams.s) / x.scale,
                      (np.asarray(init_cams.tx) - x.center[..., 0]) / x.scale,
                      (np.asarray(init_cams.ty) - x.center[..., 1]) / x.scale], axis=-1)
    values = {
        "r": init_params.r, "theta": init_params.theta, "psi": init_params.psi, "cam": cam_n,
        "beta": init_params.beta.reshape(-1, init_params.beta.shape[-1]).mean(axis=0)
        if cfg.tie_beta else init_params.beta,
    }
    n1 = max(1, int(round(cfg.stage_split * cfg.max_iters)))
    stages = [("rigid", ("r", "cam"), n1),
              ("local", ("r", "theta", "beta", "psi"), max(1, cfg.max_iters - n1))]
    history = as_history(TERMS)
    use_targets = _needs_targets(cfg)
    stage_log = []
    termination = "max_iters"
    it = 0
    for name, free, budget in stages:
        state = OptimState(cfg.optimizer, lr=cfg.lr)
        stopper = _Stopper(cfg.tol, cfg.patience)
        start = it
        stage_term = "max_iters"
        for k in range(budget):
            tape = Tape()
            var = {key: tape.var(values[key]) if key in free else values[key] for key in values}
            beta = var["beta"]
            if cfg.tie_beta:
                beta = ops.mul(np.ones(lead + (1,)), beta)
            params = FaceParams(var["r"], var["theta"], beta, var["psi"])
            cam = var["cam"]
            cams = CameraParams(ops.mul(ops.getitem(cam, (Ellipsis, 0)), x.scale),
                                ops.add(ops.mul(ops.getitem(cam, (Ellipsis, 1)), x.scale), x.center[..., 0]),
                                ops.add(ops.mul(ops.getitem(cam, (Ellipsis, 2)), x.scale), x.center[..., 1]))
            targets = run_estep(params, assets, cfg.window, cfg.eps_vis) if use_targets else None
            total, parts = objective(assets, params, cams, obs.landmarks, targets, cfg, "baseline")
            tv = _record(history, total, parts, it)
            it += 1
            if stopper.update(tv):
                stage_term = "converged"
                break
            if k == budget - 1:
                break
            keys = list(free)
            new = step(state, [values[key] for key in keys], grad(tape, total, [var[key] for key in keys]))
            for key, val in zip(keys, new):
                values[key] = val
            values["cam"][..., 0] = np.maximum(values["cam"][..., 0], MIN_SCALE)
        stage_log.append({"stage": name, "start": start, "iterations": it - start, "termination": stage_term})
        termination = stage_term
    beta = values["beta"]
    if cfg.tie_beta:
        beta = np.broadcast_to(beta, lead + beta.shape).copy()
    params = FaceParams(values["r"].copy(), values["theta"].copy(), beta.copy(), values["psi"].copy())
    cam = values["cam"]
    cams = CameraParams(cam[..., 0] * x.scale, cam[..., 1] * x.scale + x.center[..., 0],
                        cam[..., 2] * x.scale + x.center[..., 1])
    return FitResult(params, cams, history, len(history["total"]), termination, stages=stage_log)
