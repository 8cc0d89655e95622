"""Automatic quality control of fitted annotations."""
import dataclasses

import numpy as np

SHAPE_NORM_LIMIT = 1.0


def mean_shape_norm(params):
    beta = np.asarray(params.beta, dtype=np.float64)
    return float(np.mean(np.linalg.norm(beta, axis=-1)))


def qc_filter(record, obs):
    """Return a copy of ``record`` with its QC status set.

    Any invalid detection rejects the sequence; otherwise a mean shape norm
    above 1.0 rejects it (exactly 1.0 is accepted).
    """
    if not np.all(obs.valid):
        bad = int(np.count_nonzero(~obs.valid))
        return dataclasses.replace(record, qc_status="rejected-detection",
                                   reason=record.reason or f"{bad} frame-view(s) without a detection")
    if record.params is None:
        return dataclasses.replace(record, qc_status="rejected-detection",
                                   reason=record.reason or "no fitted parameters")
    norm = mean_shape_norm(record.params)
    if norm > SHAPE_NORM_LIMIT:
        return dataclasses.replace(record, qc_status="rejected-shape",
                                   reason=f"mean shape norm {norm:.6g} > {SHAPE_NORM_LIMIT}")
    return dataclasses.replace(record, qc_status="accepted", reason="")
