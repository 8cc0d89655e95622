"""Weak-perspective camera, quaternion helpers, vertex normals and visibility.

Camera convention: the camera looks along -z; image axes are the model x and
y axes, so a face whose normals point to +z is seen head-on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .diff import ops
from .diff.core import value_of
from .errors import InvalidInputError

VIEW_DIR = np.array([0.0, 0.0, -1.0])
DEFAULT_EPS_VIS = 0.05


@dataclass
class CameraParams:
    """Scale ``s`` (pixels per model unit) and translation ``tx, ty`` (pixels).

    Fields may be batched arrays or diff Vars of matching shape.
    """
    s: object
    tx: object
    ty: object

    def stacked(self):
        return ops.stack([self.s, self.tx, self.ty], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[..., 0], arr[..., 1], arr[..., 2])

    def numpy(self):
        return CameraParams(*(np.array(value_of(v)) for v in (self.s, self.tx, self.ty)))

    def validate(self):
        s = value_of(self.s)
        vals = [s, value_of(self.tx), value_of(self.ty)]
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise InvalidInputError("non-finite camera parameters")
        if np.any(s <= 0):
            raise InvalidInputError("camera scale must be positive")


def project(points, cam):
    """Weak perspective: (x, y, z) -> (s x + tx, s y + ty), broadcast over batches.

    ``points`` is (..., N, 3); camera fields are (...) matching the batch.
    """
    pv = value_of(points)
    if not np.all(np.isfinite(pv)):
        raise InvalidInputError("non-finite points")
    cam.validate()
    xy = ops.getitem(points, (Ellipsis, slice(0, 2)))
    s = ops.reshape(cam.s, np.shape(value_of(cam.s)) + (1, 1))
    t = ops.reshape(ops.stack([cam.tx, cam.ty], axis=-1), np.shape(value_of(cam.tx)) + (1, 2))
    return ops.add(ops.mul(s, xy), t)


# -- quaternions ----------------------------------------------------------------

def axis_angle_to_quat(r):
    """Unit quaternion (w, x, y, z) of axis-angle ``r``, aligned to w >= 0."""
    rv = value_of(r)
    if np.any(np.linalg.norm(rv, axis=-1) >= 2 * np.pi):
        raise InvalidInputError("|r| must be below 2*pi")
    return ops.axis_angle_quat(r)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, w = q[..., 1:], q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def rotation_matrix(r):
    return ops.rodrigues(np.asarray(r, dtype=np.float64))


def hemisphere_align(q):
    """Flip quaternions to w >= 0."""
    q = np.array(q, dtype=np.float64)
    q[q[..., 0] < 0] *= -1.0
    return q


# -- normals and visibility -----------------------------------------------------

def vertex_normals(vertices, faces):
    """Area-weighted unit vertex normals; vertices with no accumulated normal get +z.

    ``vertices`` may be (N, 3) or batched (..., N, 3); ``faces`` is (F, 3).
    """
    faces = np.asarray(faces)
    if faces.size == 0:
        raise InvalidInputError("empty topology")
    v = np.asarray(value_of(vertices), dtype=np.float64)
    if v.ndim > 2:
        flat = v.reshape(-1, *v.shape[-2:])
        return np.stack([vertex_normals(x, faces) for x in flat]).reshape(v.shape)
    acc = kernels.accumulate_face_normals(v, faces)
    length = np.linalg.norm(acc, axis=1)
    degenerate = length == 0
    out = acc / np.where(degenerate, 1.0, length)[:, None]
    out[degenerate] = (0.0, 0.0, 1.0)
    return out


def visibility_weights(normals, view_dir=VIEW_DIR, eps_vis=DEFAULT_EPS_VIS):
    """Back-face cosine confidence ``max(n . -view_dir, 0)`` floored at ``eps_vis``."""
    if not 0 < eps_vis < 1:
        raise InvalidInputError("eps_vis must lie in (0, 1)")
    n = np.asarray(normals, dtype=np.float64)
    d = np.asarray(view_dir, dtype=np.float64)
    cos = -np.einsum("...c,...c->...", n, d)
    return np.clip(cos, eps_vis, 1.0)
