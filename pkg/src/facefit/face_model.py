"""Linear blendshape face model with a single head rotation about the origin.

A desk-scale stand-in for FLAME: vertices are
``R(r) @ (template + shape_basis.beta + expr_basis.psi + pose_basis.theta)``
and 3D landmarks are a fixed convex combination of vertices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .diff import ops
from .diff.core import value_of
from .errors import InvalidConfigError, InvalidInputError

ASSETS_SCHEMA_VERSION = 1

# half-ellipsoid semi-axes (x, y, z) in model units
ELLIPSOID_AXES = (0.8, 1.0, 0.6)


@dataclass
class FaceModelAssets:
    template: np.ndarray          # (N_M, 3)
    shape_basis: np.ndarray       # (N_M, 3, K_shape)
    expr_basis: np.ndarray        # (N_M, 3, K_expr)
    pose_basis: np.ndarray        # (N_M, 3, K_pose)
    landmark_embedding: np.ndarray  # (N_J, N_M) dense, rows convex
    eye_pair: tuple
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    seed: int | None = None

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.expr_basis = np.asarray(self.expr_basis, dtype=np.float64)
        self.pose_basis = np.asarray(self.pose_basis, dtype=np.float64)
        self.landmark_embedding = np.asarray(self.landmark_embedding, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.eye_pair = tuple(int(i) for i in self.eye_pair)
        self.validate()
        # (K_pose + K_shape + K_expr, 3 N_M), in the same order as FaceParams.coeffs
        n = self.n_vertices
        self._basis_rows = np.concatenate([
            self.pose_basis.reshape(n * 3, -1).T,
            self.shape_basis.reshape(n * 3, -1).T,
            self.expr_basis.reshape(n * 3, -1).T,
        ], axis=0)

    @property
    def n_vertices(self):
        return self.template.shape[0]

    @property
    def n_landmarks(self):
        return self.landmark_embedding.shape[0]

    @property
    def dims(self):
        return {
            "N_M": self.n_vertices, "N_J": self.n_landmarks,
            "K_shape": self.shape_basis.shape[2], "K_expr": self.expr_basis.shape[2],
            "K_pose": self.pose_basis.shape[2],
        }

    def validate(self):
        n = self.template.shape[0]
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            raise InvalidInputError("template must be (N_M, 3)")
        for name in ("shape_basis", "expr_basis", "pose_basis"):
            b = getattr(self, name)
            if b.ndim != 3 or b.shape[:2] != (n, 3):
                raise InvalidInputError(f"{name} must be (N_M, 3, K)")
            if not np.all(np.isfinite(b)):
                raise InvalidInputError(f"{name} has non-finite entries")
        emb = self.landmark_embedding
        if emb.ndim != 2 or emb.shape[1] != n:
            raise InvalidInputError("landmark_embedding must be (N_J, N_M)")
        if np.any(emb < 0) or np.any(np.abs(emb.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidInputError("landmark_embedding rows must be convex combinations")
        i, j = self.eye_pair
        if i == j or not (0 <= i < emb.shape[0] and 0 <= j < emb.shape[0]):
            raise InvalidInputError("eye_pair must hold two distinct landmark indices")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise InvalidInputError("face indices out of range")

    # -- serialization --

    def to_dict(self):
        rows = []
        for row in self.landmark_embedding:
            idx = np.flatnonzero(row)
            rows.append({"indices": idx.tolist(), "weights": row[idx].tolist()})
        return {
            "schema_version": ASSETS_SCHEMA_VERSION,
            "dims": self.dims,
            "seed": self.seed,
            "template": self.template.reshape(-1).tolist(),
            "shape_basis": self.shape_basis.reshape(-1).tolist(),
            "expr_basis": self.expr_basis.reshape(-1).tolist(),
            "pose_basis": self.pose_basis.reshape(-1).tolist(),
            "landmark_embedding": rows,
            "eye_pair": list(self.eye_pair),
            "faces": self.faces.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != ASSETS_SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported assets schema {d.get('schema_version')!r}")
        dims = d["dims"]
        n, nj = dims["N_M"], dims["N_J"]
        emb = np.zeros((nj, n))
        for k, row in enumerate(d["landmark_embedding"]):
            emb[k, row["indices"]] = row["weights"]
        return cls(
            template=np.reshape(d["template"], (n, 3)),
            shape_basis=np.reshape(d["shape_basis"], (n, 3, dims["K_shape"])),
            expr_basis=np.reshape(d["expr_basis"], (n, 3, dims["K_expr"])),
            pose_basis=np.reshape(d["pose_basis"], (n, 3, dims["K_pose"])),
            landmark_embedding=emb,
            eye_pair=tuple(d["eye_pair"]),
            faces=np.reshape(np.asarray(d["faces"], dtype=np.int64), (-1, 3)),
            seed=d.get("seed"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FaceParams:
    """Head rotation ``r`` (axis-angle) and pose/shape/expression coefficients.

    Fields may carry leading batch dimensions, and may be diff Vars.
    """
    r: object
    theta: object
    beta: object
    psi: object

    @classmethod
    def zeros(cls, dims, batch=()):
        batch = tuple(batch)
        return cls(np.zeros(batch + (3,)), np.zeros(batch + (dims["K_pose"],)),
                   np.zeros(batch + (dims["K_shape"],)), np.zeros(batch + (dims["K_expr"],)))

    def coeffs(self):
        """Linear coefficients concatenated as (theta, beta, psi)."""
        return ops.concat([self.theta, self.beta, self.psi], axis=-1)

    def numpy(self):
        return FaceParams(*(np.array(value_of(x)) for x in (self.r, self.theta, self.beta, self.psi)))

    def validate(self):
        vals = [value_of(x) for x in (self.r, self.theta, self.beta, self.psi)]
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise InvalidInputError("non-finite face parameters")
        if np.any(np.linalg.norm(vals[0], axis=-1) >= 2 * np.pi):
            raise InvalidInputError("|r| must be below 2*pi")


@dataclass
class MeshBundle:
    vertices: object     # (..., N_M, 3)
    landmarks3d: object  # (..., N_J, 3)


# -- asset generation -----------------------------------------------------------

def _hemisphere_points(n):
    ax, ay, az = ELLIPSOID_AXES
    k = np.arange(n, dtype=np.float64)
    rad = 0.95 * np.sqrt((k + 0.5) / n)
    ang = k * np.pi * (3.0 - np.sqrt(5.0))
    x = ax * rad * np.cos(ang)
    y = ay * rad * np.sin(ang)
    z = az * np.sqrt(1.0 - rad**2)
    return np.stack([x, y, z], axis=1)


def _triangulate(points):
    if len(points) < 3:
        return np.zeros((0, 3), dtype=np.int64)
    tri = Delaunay(points[:, :2]).simplices.astype(np.int64)
    # orient every triangle so its normal points to +z
    a, b, c = points[tri[:, 0]], points[tri[:, 1]], points[tri[:, 2]]
    nz = np.cross(b - a, c - a)[:, 2]
    flip = nz < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _smooth_fields(rng, points, k, n_waves=6):
    """(N, 3, k) sums of low-frequency random sinusoids, columns at unit Frobenius norm."""
    n = len(points)
    out = np.empty((n, 3, k))
    for j in range(k):
        for c in range(3):
            freqs = rng.normal(scale=1.5, size=(n_waves, 3))
            phases = rng.uniform(0, 2 * np.pi, size=n_waves)
            amps = rng.normal(size=n_waves)
            out[:, c, j] = np.cos(points @ freqs.T + phases) @ amps
        out[:, :, j] /= np.linalg.norm(out[:, :, j])
    return out


def _farthest_point_indices(points, count):
    start = int(np.argmin(np.linalg.norm(points[:, :2], axis=1)))
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen)


def build_synthetic_assets(seed, dims):
    """Deterministic synthetic face model for ``dims`` (N_M, N_J, K_shape, K_expr, K_pose).

    ``dims`` may be a mapping with those keys or a 5-tuple in that order.
    """
    if not isinstance(dims, dict):
        dims = dict(zip(("N_M", "N_J", "K_shape", "K_expr", "K_pose"), dims))
    try:
        n, nj, ks, ke, kp = (int(dims[k]) for k in ("N_M", "N_J", "K_shape", "K_expr", "K_pose"))
    except KeyError as exc:
        raise InvalidConfigError(f"missing dimension {exc}") from None
    if min(n, nj, ks, ke, kp) < 1:
        raise InvalidConfigError("all model dimensions must be >= 1")
    if nj > n:
        raise InvalidConfigError("N_J must not exceed N_M")
    if nj < 2:
        raise InvalidConfigError("N_J must be >= 2 to define an eye pair")

    rng = np.random.default_rng(seed)
    template = _hemisphere_points(n)
    shape_basis = _smooth_fields(rng, template, ks)
    expr_basis = _smooth_fields(rng, template, ke)
    pose_basis = _smooth_fields(rng, template, kp)

    lmk_idx = _farthest_point_indices(template, nj)
    emb = np.zeros((nj, n))
    emb[np.arange(nj), lmk_idx] = 1.0

    lmk_pts = template[lmk_idx]
    left = int(np.argmin(np.linalg.norm(lmk_pts[:, :2] - (-0.35, 0.3), axis=1)))
    d_right = np.linalg.norm(lmk_pts[:, :2] - (0.35, 0.3), axis=1)
    d_right[left] = np.inf
    right = int(np.argmin(d_right))

    return FaceModelAssets(template, shape_basis, expr_basis, pose_basis, emb,
                           (left, right), faces=_triangulate(template), seed=seed)


# -- skinning -------------------------------------------------------------------

def _check_dims(assets, params):
    d = assets.dims
    expect = {"r": 3, "theta": d["K_pose"], "beta": d["K_shape"], "psi": d["K_expr"]}
    for name, size in expect.items():
        shape = np.shape(value_of(getattr(params, name)))
        if not shape or shape[-1] != size:
            raise InvalidInputError(f"{name} has trailing size {shape[-1:] }, expected {size}")
    batch = {np.shape(value_of(getattr(params, k)))[:-1] for k in expect}
    if len(batch) != 1:
        raise InvalidInputError("face parameter batch shapes disagree")


def embed_landmarks(assets, vertices):
    return ops.einsum("jn,...nc->...jc", assets.landmark_embedding, vertices)


def unposed_vertices(assets, params):
    """Vertices before head rotation, i.e. in the canonical frame."""
    _check_dims(assets, params)
    coeffs = params.coeffs()
    offsets = ops.matmul(ops.reshape(coeffs, np.shape(value_of(coeffs))[:-1] + (1, -1)),
                         assets._basis_rows)
    batch = np.shape(value_of(coeffs))[:-1]
    return ops.add(assets.template, ops.reshape(offsets, batch + (assets.n_vertices, 3)))


def skin(assets, params):
    """Posed mesh and 3D landmarks for (possibly batched) ``params``."""
    local = unposed_vertices(assets, params)
    R = ops.rodrigues(params.r)
    verts = ops.einsum("...ij,...nj->...ni", R, local)
    return MeshBundle(verts, embed_landmarks(assets, verts))


def skin_canonical(assets, params):
    """Mesh with the head rotation removed; equals ``canonicalize(skin(...), r)``."""
    local = unposed_vertices(assets, params)
    return MeshBundle(local, embed_landmarks(assets, local))


def canonicalize(mesh, r):
    """Apply the inverse head rotation to every vertex and landmark."""
    rv = value_of(r)
    if not np.all(np.isfinite(rv)):
        raise InvalidInputError("non-finite rotation")
    if np.any(np.linalg.norm(rv, axis=-1) >= 2 * np.pi):
        raise InvalidInputError("|r| must be below 2*pi")
    R = ops.rodrigues(r)
    return MeshBundle(ops.einsum("...ji,...nj->...ni", R, mesh.vertices),
                      ops.einsum("...ji,...nj->...ni", R, mesh.landmarks3d))
