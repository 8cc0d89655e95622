"""Batch annotation: fit each sequence, apply QC, compute metrics, write outputs."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..errors import FaceFitError
from ..metrics import write_metrics_csv
from ..optim.config import OptimConfig
from ..optim.fitting import direct_fit, encoder_predict, neuface_fit
from .data import AnnotationRecord, dump_json
from .evaluate import evaluate
from .qc import qc_filter

log = logging.getLogger(__name__)

METHODS = ("neuface", "direct", "encoder-only")


def effective_config(cfg, obs):
    """Single-view sequences are fitted without the multi-view term."""
    if obs.n_views == 1 and cfg.weights.lam_view != 0:
        w = cfg.to_dict()["weights"]
        w["lam_view"] = 0.0
        return cfg.replace(weights=w)
    return cfg


def annotate_one(obs, assets, encoder, cfg, method):
    """Returns (AnnotationRecord, MetricReport or None, FitResult or None)."""
    if method not in METHODS:
        raise FaceFitError(f"unknown method {method!r}")
    cfg = effective_config(cfg, obs)
    echo = cfg.to_dict()
    if not np.all(obs.valid):
        rec = AnnotationRecord(obs.sequence_id, None, None, method, config=echo, seed=cfg.seed)
        return qc_filter(rec, obs), None, None
    fit = None
    try:
        if method == "neuface":
            fit = neuface_fit(obs, assets, encoder, cfg)
            params, cams = fit.params, fit.cams
        else:
            params, cams = encoder_predict(encoder, obs, assets)
            if method == "direct":
                fit = direct_fit(obs, assets, params, cams, cfg)
                params, cams = fit.params, fit.cams
    except FaceFitError as exc:
        log.warning("sequence %s failed: %s", obs.sequence_id, exc)
        rec = AnnotationRecord(obs.sequence_id, None, None, method, qc_status="rejected-detection",
                               reason=f"driver error: {exc}", config=echo, seed=cfg.seed)
        return rec, None, None
    rec = qc_filter(AnnotationRecord(obs.sequence_id, params, cams, method, config=echo, seed=cfg.seed), obs)
    return rec, evaluate(obs, assets, params, cams, method), fit


def _job(args):
    return annotate_one(*args)


def annotate(observations, assets, encoder, cfg, method, out_dir=None, workers=1):
    """Annotate every sequence; outputs are ordered (and written) by sequence id."""
    if not isinstance(cfg, OptimConfig):
        cfg = OptimConfig.from_dict(cfg)
    cfg.validate()
    observations = sorted(observations, key=lambda o: o.sequence_id)
    jobs = [(obs, assets, encoder, cfg, method) for obs in observations]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    records = [r[0] for r in results]
    reports = [r[1] for r in results if r[1] is not None]
    if out_dir is not None:
        write_outputs(out_dir, results)
    return records, reports


def write_outputs(out_dir, results):
    ann_dir = os.path.join(out_dir, "annotations")
    fit_dir = os.path.join(out_dir, "fits")
    os.makedirs(ann_dir, exist_ok=True)
    os.makedirs(fit_dir, exist_ok=True)
    for rec, _, fit in results:
        rec.save(os.path.join(ann_dir, f"{rec.sequence_id}.annotation.json"))
        if fit is not None:
            dump_json(fit.to_dict(config=rec.config, seed=rec.seed),
                      os.path.join(fit_dir, f"{rec.sequence_id}.fit.json"))
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), [r[1] for r in results if r[1] is not None])
