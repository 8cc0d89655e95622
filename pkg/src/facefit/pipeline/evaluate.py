"""Metric reports for fitted (or ground-truth) parameter sets."""
from __future__ import annotations

import numpy as np

from .. import metrics
from ..diff.core import value_of
from ..face_model import skin, skin_canonical
from ..geometry import project


def reconstruct(assets, params):
    """Posed meshes, canonical meshes and posed 3D landmarks as arrays."""
    posed = skin(assets, params)
    canon = skin_canonical(assets, params)
    return value_of(posed.vertices), value_of(canon.vertices), value_of(posed.landmarks3d)


def reference_landmarks(obs, assets):
    """Clean ground-truth 2D landmarks when available, else the observations."""
    if obs.has_ground_truth:
        return value_of(project(skin(assets, obs.gt_params).landmarks3d, obs.gt_cams))
    return obs.landmarks


def evaluate(obs, assets, params, cams, method):
    """MetricReport: CVD (canonical frame, >= 2 views), MSI on world tracks, NME, MPVE."""
    verts, canon, lmk3d = reconstruct(assets, params)
    report = metrics.MetricReport(obs.sequence_id, method, n_frames=obs.n_frames, n_views=obs.n_views)
    if obs.n_views >= 2:
        report.cvd = metrics.cvd(canon)
    if obs.n_frames >= 3:
        report.msi3d_lmk = metrics.msi3d(lmk3d)
        report.msi3d_vtx = metrics.msi3d(verts)
    pred2d = value_of(project(lmk3d, cams))
    report.nme = metrics.nme(pred2d, reference_landmarks(obs, assets), eye_pair=assets.eye_pair)
    if obs.has_ground_truth:
        gt_verts = value_of(skin(assets, obs.gt_params).vertices)
        report.mpve = metrics.mpve(verts, gt_verts)
    return report
