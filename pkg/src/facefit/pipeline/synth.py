"""Synthetic ground-truth sequences and encoder training sets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.transform import Rotation

from ..diff.core import value_of
from ..encoder import normalize_landmarks, regression_targets
from ..errors import InvalidConfigError
from ..face_model import FaceParams, skin
from ..geometry import CameraParams, project
from .data import ObservationSet

DEFAULT_MODEL_DIMS = {"N_M": 144, "N_J": 24, "K_shape": 8, "K_expr": 6, "K_pose": 3}
IMAGE_CENTER = 256.0


@dataclass
class SequenceConfig:
    n_frames: int = 30
    n_views: int = 3
    smoothness: float = 4.0        # gaussian low-pass sigma in frames for theta/psi
    noise_px: float = 0.5
    rig_yaw_deg: list | None = None  # default: evenly spread over [-45, 45]
    beta_norm_max: float = 0.8
    theta_std: float = 0.3
    psi_std: float = 0.6
    head_amplitude: tuple = (0.15, 0.35, 0.1)  # pitch, yaw, roll in radians
    scale_range: tuple = (90.0, 110.0)

    def rig(self):
        if self.rig_yaw_deg is not None:
            if len(self.rig_yaw_deg) != self.n_views:
                raise InvalidConfigError("rig_yaw_deg needs one angle per view")
            return np.radians(np.asarray(self.rig_yaw_deg, dtype=np.float64))
        if self.n_views == 1:
            return np.zeros(1)
        return np.radians(np.linspace(-45.0, 45.0, self.n_views))

    def validate(self):
        if self.noise_px < 0:
            raise InvalidConfigError("noise must be non-negative")
        if self.n_views < 1 or self.n_frames < 1:
            raise InvalidConfigError("need at least one frame and one view")
        return self

    def to_dict(self):
        d = asdict(self)
        d["head_amplitude"] = list(self.head_amplitude)
        d["scale_range"] = list(self.scale_range)
        return d


def _lowpass(rng, n_frames, k, std, sigma):
    pad = int(4 * sigma) + 1
    raw = rng.normal(size=(n_frames + 2 * pad, k))
    smooth = gaussian_filter1d(raw, sigma, axis=0, mode="nearest") if sigma > 0 else raw
    smooth = smooth[pad:pad + n_frames]
    return std * smooth / max(smooth.std(), 1e-12)


def _compose_rig(r_head, yaw):
    """Axis-angle of the head seen from a camera rotated by ``yaw`` about the y axis."""
    rig = Rotation.from_rotvec([0.0, yaw, 0.0])
    return (rig * Rotation.from_rotvec(r_head)).as_rotvec()


def gen_sequence(seed, assets, cfg=None, sequence_id=None):
    """Smooth ground-truth trajectory observed from a fixed multi-camera rig."""
    cfg = (cfg or SequenceConfig()).validate()
    d = assets.dims
    nf, nv = cfg.n_frames, cfg.n_views
    rng = np.random.default_rng(seed)

    direction = rng.normal(size=d["K_shape"])
    beta = direction / np.linalg.norm(direction) * rng.uniform(0.3, cfg.beta_norm_max)
    theta = _lowpass(rng, nf, d["K_pose"], cfg.theta_std, cfg.smoothness)
    psi = _lowpass(rng, nf, d["K_expr"], cfg.psi_std, cfg.smoothness)

    t = np.arange(nf) / max(nf, 1)
    freq = rng.uniform(0.5, 1.5, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    head = np.asarray(cfg.head_amplitude) * np.sin(2 * np.pi * freq * t[:, None] + phase)

    rig = cfg.rig()
    r = np.stack([[_compose_rig(head[f], rig[v]) for v in range(nv)] for f in range(nf)])
    params = FaceParams(
        r,
        np.broadcast_to(theta[:, None], (nf, nv, d["K_pose"])).copy(),
        np.broadcast_to(beta, (nf, nv, d["K_shape"])).copy(),
        np.broadcast_to(psi[:, None], (nf, nv, d["K_expr"])).copy(),
    )

    s_view = rng.uniform(*cfg.scale_range, size=nv)
    t_view = IMAGE_CENTER + rng.normal(scale=10.0, size=(nv, 2))
    drift = np.cumsum(rng.normal(scale=0.3, size=(nf, nv, 2)), axis=0)
    cams = CameraParams(np.broadcast_to(s_view, (nf, nv)).copy(),
                        t_view[None, :, 0] + drift[..., 0], t_view[None, :, 1] + drift[..., 1])

    clean = value_of(project(skin(assets, params).landmarks3d, cams))
    obs = clean + rng.normal(scale=cfg.noise_px, size=clean.shape) if cfg.noise_px > 0 else clean
    return ObservationSet(
        sequence_id or f"seq{seed:04d}", obs, np.ones((nf, nv), dtype=bool), params, cams,
        meta={"seed": int(seed), "generator": cfg.to_dict()},
    )


@dataclass
class PretrainConfig:
    n_samples: int = 2000
    noise_px: float = 0.5
    max_yaw_deg: float = 55.0
    head_std: float = 0.2
    beta_norm_max: float = 0.9
    theta_std: float = 0.3
    psi_std: float = 0.6
    scale_range: tuple = (80.0, 120.0)
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 64
    width: int = 256
    depth: int = 4
    extra: dict = field(default_factory=dict)


def sample_training_set(seed, assets, cfg=None):
    """Independent random faces and cameras, returned as (EncoderInput, targets, params, cams)."""
    cfg = cfg or PretrainConfig()
    if cfg.n_samples < 1:
        raise InvalidConfigError("need at least one training sample")
    d = assets.dims
    n = cfg.n_samples
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(n, d["K_shape"]))
    beta = direction / np.linalg.norm(direction, axis=1, keepdims=True)
    beta *= rng.uniform(0.0, cfg.beta_norm_max, size=(n, 1))
    theta = rng.normal(scale=cfg.theta_std, size=(n, d["K_pose"]))
    psi = rng.normal(scale=cfg.psi_std, size=(n, d["K_expr"]))
    yaw = np.radians(rng.uniform(-cfg.max_yaw_deg, cfg.max_yaw_deg, size=n))
    head = rng.normal(scale=cfg.head_std, size=(n, 3))
    r = np.stack([_compose_rig(head[i], yaw[i]) for i in range(n)])
    params = FaceParams(r, theta, beta, psi)
    cams = CameraParams(rng.uniform(*cfg.scale_range, size=n),
                        IMAGE_CENTER + rng.normal(scale=20.0, size=n),
                        IMAGE_CENTER + rng.normal(scale=20.0, size=n))
    lm = value_of(project(skin(assets, params).landmarks3d, cams))
    lm = lm + rng.normal(scale=cfg.noise_px, size=lm.shape)
    x = normalize_landmarks(lm)
    return x, regression_targets(params, cams, x), params, cams
