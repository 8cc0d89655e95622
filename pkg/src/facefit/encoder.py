"""Fully-connected ReLU encoder mapping normalized 2D landmarks to face and camera parameters."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diff import OptimState, Tape, grad, ops, step
from .diff.core import value_of
from .errors import InvalidInputError
from .face_model import FaceParams
from .geometry import CameraParams

ENCODER_SCHEMA_VERSION = 1
SCALE_FLOOR = 0.1


@dataclass
class EncoderInput:
    """Landmarks centered and scaled to unit RMS, plus what is needed to undo it."""
    features: np.ndarray  # (..., 2 N_J)
    center: np.ndarray    # (..., 2)
    scale: np.ndarray     # (...)

    def __len__(self):
        return len(self.features)

    def take(self, idx):
        return EncoderInput(self.features[idx], self.center[idx], self.scale[idx])


def normalize_landmarks(landmarks2d):
    """Build an :class:`EncoderInput` from (..., N_J, 2) pixel landmarks."""
    lm = np.asarray(landmarks2d, dtype=np.float64)
    if lm.ndim < 2 or lm.shape[-1] != 2:
        raise InvalidInputError("landmarks must be (..., N_J, 2)")
    if not np.all(np.isfinite(lm)):
        raise InvalidInputError("non-finite landmarks")
    center = lm.mean(axis=-2)
    centered = lm - center[..., None, :]
    scale = np.sqrt(np.mean(centered**2, axis=(-2, -1)))
    scale = np.where(scale > 0, scale, 1.0)
    feats = (centered / scale[..., None, None]).reshape(lm.shape[:-2] + (-1,))
    return EncoderInput(feats, center, scale)


@dataclass
class EncoderWeights:
    layers: list  # [(W (rows, cols), b (rows,)), ...]
    seed: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("encoder needs at least one layer")
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if np.shape(value_of(w1))[1] != np.shape(value_of(w0))[0]:
                raise InvalidInputError("consecutive layer shapes do not compose")

    @property
    def d_in(self):
        return np.shape(value_of(self.layers[0][0]))[1]

    @property
    def d_out(self):
        return np.shape(value_of(self.layers[-1][0]))[0]

    def flat(self):
        """Parameters as a flat list [W1, b1, W2, b2, ...]."""
        return [p for layer in self.layers for p in layer]

    @classmethod
    def from_flat(cls, params, seed=None):
        return cls([(params[i], params[i + 1]) for i in range(0, len(params), 2)], seed=seed)

    def copy(self):
        return EncoderWeights([(np.array(w), np.array(b)) for w, b in self.layers], seed=self.seed)

    def to_dict(self, model_dims=None):
        return {
            "schema_version": ENCODER_SCHEMA_VERSION,
            "seed": self.seed,
            "model_dims": model_dims,
            "normalization": {"center": "mean", "scale": "rms", "scale_floor": SCALE_FLOOR},
            "layers": [
                {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
                 "weight": np.asarray(w).reshape(-1).tolist(), "bias": np.asarray(b).tolist()}
                for w, b in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != ENCODER_SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported encoder schema {d.get('schema_version')!r}")
        layers = [(np.reshape(l["weight"], (l["rows"], l["cols"])).astype(np.float64),
                   np.asarray(l["bias"], dtype=np.float64)) for l in d["layers"]]
        return cls(layers, seed=d.get("seed"))

    def save(self, path, model_dims=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(model_dims), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def output_size(model_dims):
    return 3 + model_dims["K_pose"] + model_dims["K_shape"] + model_dims["K_expr"] + 3


def init_weights(seed, dims):
    """Gaussian init: hidden entries ~ N(0, 2/rows), last layer ~ N(0, 1/rows); zero biases.

    ``dims`` holds ``d_in``, ``d_out``, ``width`` (m) and ``depth`` (L >= 2).
    """
    d_in, d_out, m, depth = (int(dims[k]) for k in ("d_in", "d_out", "width", "depth"))
    if depth < 2 or min(d_in, d_out, m) < 1:
        raise InvalidInputError("invalid encoder dimensions")
    rng = np.random.default_rng(seed)
    sizes = [d_in] + [m] * (depth - 1) + [d_out]
    layers = []
    for l in range(depth):
        rows, cols = sizes[l + 1], sizes[l]
        var = (1.0 if l == depth - 1 else 2.0) / rows
        layers.append((rng.normal(0.0, np.sqrt(var), size=(rows, cols)), np.zeros(rows)))
    return EncoderWeights(layers, seed=seed)


def raw_forward(w, features):
    """Network output before splitting, (B, d_out)."""
    h = features
    n = len(w.layers)
    for i, (W, b) in enumerate(w.layers):
        h = ops.add(ops.matmul(h, ops.einsum("ij->ji", W)), b)
        if i < n - 1:
            h = ops.relu(h)
    return h


def split_output(out, model_dims):
    """Slice raw output into face parameters and a normalized-frame camera."""
    kp, ks, ke = model_dims["K_pose"], model_dims["K_shape"], model_dims["K_expr"]
    idx = np.cumsum([0, 3, kp, ks, ke, 1, 1, 1])
    sl = [ops.getitem(out, (Ellipsis, slice(idx[i], idx[i + 1]))) for i in range(7)]
    params = FaceParams(sl[0], sl[1], sl[2], sl[3])
    s = ops.add(ops.softplus(ops.reshape(sl[4], np.shape(value_of(sl[4]))[:-1])), SCALE_FLOOR)
    tx = ops.reshape(sl[5], np.shape(value_of(sl[5]))[:-1])
    ty = ops.reshape(sl[6], np.shape(value_of(sl[6]))[:-1])
    return params, CameraParams(s, tx, ty)


def denormalize_camera(cam, x):
    """Map a camera from the normalized landmark frame to pixels."""
    s = ops.mul(cam.s, x.scale)
    tx = ops.add(ops.mul(cam.tx, x.scale), x.center[..., 0])
    ty = ops.add(ops.mul(cam.ty, x.scale), x.center[..., 1])
    return CameraParams(s, tx, ty)


def forward(w, x, model_dims):
    """Face parameters and pixel-space camera for every row of ``x``.

    The same weights are applied independently to each row, so frames and
    views share the network but never exchange information.
    """
    feats = np.asarray(x.features, dtype=np.float64)
    if feats.shape[-1] != w.d_in:
        raise InvalidInputError(f"encoder expects {w.d_in} features, got {feats.shape[-1]}")
    if w.d_out != output_size(model_dims):
        raise InvalidInputError("encoder output size does not match the face model")
    squeeze = feats.ndim == 1
    if squeeze:
        feats = feats[None]
    params, cam = split_output(raw_forward(w, feats), model_dims)
    if squeeze:
        params = FaceParams(*(ops.getitem(v, 0) for v in (params.r, params.theta, params.beta, params.psi)))
        cam = CameraParams(*(ops.getitem(v, 0) for v in (cam.s, cam.tx, cam.ty)))
    return params, denormalize_camera(cam, x)


def regression_targets(params, cam, x):
    """Stack ground truth in the encoder's output layout, camera in the normalized frame."""
    s = np.asarray(cam.s) / x.scale
    tx = (np.asarray(cam.tx) - x.center[..., 0]) / x.scale
    ty = (np.asarray(cam.ty) - x.center[..., 1]) / x.scale
    return np.concatenate([params.r, params.theta, params.beta, params.psi,
                           s[..., None], tx[..., None], ty[..., None]], axis=-1)


def _regression_loss(w, feats, targets, model_dims):
    params, cam = split_output(raw_forward(w, feats), model_dims)
    pred = ops.concat([params.r, params.theta, params.beta, params.psi,
                       ops.reshape(cam.s, (-1, 1)), ops.reshape(cam.tx, (-1, 1)),
                       ops.reshape(cam.ty, (-1, 1))], axis=-1)
    return ops.mean(ops.square(ops.sub(pred, targets)))


def regression_loss(w, x, targets, model_dims):
    return float(_regression_loss(w, x.features, targets, model_dims))


def pretrain(w0, inputs, targets, model_dims, epochs=100, lr=1e-3, batch_size=64, seed=0):
    """Adam on mean squared parameter-regression error; returns (weights, loss history).

    ``inputs`` is an :class:`EncoderInput` with one row per sample and
    ``targets`` the matching :func:`regression_targets` rows.
    """
    n = len(inputs)
    if n == 0:
        raise InvalidInputError("empty training set")
    if len(targets) != n:
        raise InvalidInputError("inputs and targets differ in length")
    w = w0.copy()
    if epochs <= 0:
        return w, []
    rng = np.random.default_rng(seed)
    state = OptimState("adam", lr=lr)
    history = [regression_loss(w, inputs, targets, model_dims)]
    params = w.flat()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            tape = Tape()
            pv = [tape.var(p) for p in params]
            loss = _regression_loss(EncoderWeights.from_flat(pv), inputs.features[idx],
                                    targets[idx], model_dims)
            params = step(state, params, grad(tape, loss, pv))
        w = EncoderWeights.from_flat(params, seed=w0.seed)
        history.append(regression_loss(w, inputs, targets, model_dims))
    return w, history
