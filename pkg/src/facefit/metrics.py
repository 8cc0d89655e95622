"""Evaluation metrics: cross-view vertex distance, motion stability, NME and MPVE."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError

EPS_MSI = 1e-8
CSV_FIELDS = ("sequence_id", "method", "cvd", "msi3d_lmk", "msi3d_vtx", "nme", "mpve")


@dataclass
class MetricReport:
    sequence_id: str
    method: str
    cvd: float | None = None
    msi3d_lmk: float | None = None
    msi3d_vtx: float | None = None
    nme: float | None = None
    mpve: float | None = None
    n_frames: int = 0
    n_views: int = 0

    def row(self):
        def fmt(x):
            return "" if x is None else repr(float(x))
        return [self.sequence_id, self.method] + [fmt(getattr(self, k)) for k in CSV_FIELDS[2:]]


def write_metrics_csv(path, reports, append=False):
    new = not append or not os.path.exists(path)
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_FIELDS)
        for rep in reports:
            writer.writerow(rep.row())


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in CSV_FIELDS[2:]:
            row[k] = float(row[k]) if row[k] else None
    return rows


def cvd(meshes, raw_sum=False):
    """Mean over frames and unordered view pairs of the L1 vertex distance.

    ``meshes`` is (N_F, N_V, N_M, 3). Each pair contributes the summed absolute
    coordinate difference divided by N_M (or the raw sum when ``raw_sum``).
    """
    m = np.asarray(meshes, dtype=np.float64)
    if m.ndim != 4:
        raise InvalidInputError("expected meshes shaped (N_F, N_V, N_M, 3)")
    nv = m.shape[1]
    if nv < 2:
        raise UndefinedMetricError("cross-view distance needs at least two views")
    pairs = [np.abs(m[:, i] - m[:, j]).sum(axis=(-1, -2)) for i, j in combinations(range(nv), 2)]
    per = np.mean(pairs, axis=0)
    if not raw_sum:
        per = per / m.shape[2]
    return float(per.mean())


def msi3d(tracks, eps_msi=EPS_MSI):
    """Mean over points of 1 / var_t(|a_t|), a_t the second difference of position.

    ``tracks`` is (N_F, ..., 3); every trailing index before the coordinate
    axis is a separate point track.
    """
    x = np.asarray(tracks, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != 3:
        raise InvalidInputError("tracks must be (N_F, ..., 3)")
    if x.shape[0] < 3:
        raise UndefinedMetricError("motion stability needs at least three frames")
    acc = x[2:] - 2.0 * x[1:-1] + x[:-2]
    mag = np.linalg.norm(acc, axis=-1)
    var = mag.var(axis=0)
    return float(np.mean(1.0 / np.maximum(var, eps_msi)))


def nme(pred2d, gt2d, eye_pair=None, d_io=None):
    """Mean landmark error over inter-ocular distance, averaged over frame-views.

    The normalizer is the ground-truth distance between ``eye_pair`` landmarks
    of each frame-view unless ``d_io`` is given explicitly.
    """
    p = np.asarray(pred2d, dtype=np.float64)
    g = np.asarray(gt2d, dtype=np.float64)
    if p.shape != g.shape or p.ndim < 2:
        raise InvalidInputError("prediction and ground truth shapes differ")
    if d_io is None:
        if eye_pair is None:
            raise InvalidInputError("need eye_pair or d_io")
        i, j = eye_pair
        d_io = np.linalg.norm(g[..., i, :] - g[..., j, :], axis=-1)
    d_io = np.broadcast_to(np.asarray(d_io, dtype=np.float64), p.shape[:-2])
    if np.any(d_io <= 0):
        raise UndefinedMetricError("inter-ocular distance is zero")
    err = np.linalg.norm(p - g, axis=-1).mean(axis=-1) / d_io
    return float(np.mean(err))


def mpve(pred_vertices, gt_vertices):
    """Mean per-vertex Euclidean error over all meshes."""
    p = np.asarray(pred_vertices, dtype=np.float64)
    g = np.asarray(gt_vertices, dtype=np.float64)
    if p.shape != g.shape:
        raise InvalidInputError(f"vertex counts differ: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=-1).mean())
