"""Observation and annotation records with their JSON schemas."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..errors import InvalidInputError
from ..face_model import FaceParams
from ..geometry import CameraParams

SCHEMA_VERSION = 1
QC_STATUSES = ("accepted", "rejected-shape", "rejected-detection")


def _params_to_dict(p):
    return {k: np.asarray(getattr(p, k)).tolist() for k in ("r", "theta", "beta", "psi")}


def _params_from_dict(d):
    return FaceParams(*(np.asarray(d[k], dtype=np.float64) for k in ("r", "theta", "beta", "psi")))


def _cams_to_dict(c):
    return {k: np.asarray(getattr(c, k)).tolist() for k in ("s", "tx", "ty")}


def _cams_from_dict(d):
    return CameraParams(*(np.asarray(d[k], dtype=np.float64) for k in ("s", "tx", "ty")))


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


@dataclass
class ObservationSet:
    sequence_id: str
    landmarks: np.ndarray              # (N_F, N_V, N_J, 2) pixels
    valid: np.ndarray                  # (N_F, N_V) bool
    gt_params: FaceParams | None = None
    gt_cams: CameraParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.landmarks.ndim != 4 or self.landmarks.shape[-1] != 2:
            raise InvalidInputError("landmarks must be (N_F, N_V, N_J, 2)")
        if self.valid.shape != self.landmarks.shape[:2]:
            raise InvalidInputError("valid flags must be (N_F, N_V)")
        if not np.all(np.isfinite(self.landmarks[self.valid])):
            raise InvalidInputError("valid landmarks must be finite")

    @property
    def n_frames(self):
        return self.landmarks.shape[0]

    @property
    def n_views(self):
        return self.landmarks.shape[1]

    @property
    def has_ground_truth(self):
        return self.gt_params is not None and self.gt_cams is not None

    def to_dict(self):
        d = {
            "schema_version": SCHEMA_VERSION,
            "kind": "observations",
            "sequence_id": self.sequence_id,
            "n_frames": self.n_frames,
            "n_views": self.n_views,
            "landmarks": np.where(self.valid[..., None, None], self.landmarks, 0.0).tolist(),
            "valid": self.valid.tolist(),
            "meta": self.meta,
        }
        if self.has_ground_truth:
            d["ground_truth"] = {"params": _params_to_dict(self.gt_params),
                                 "cameras": _cams_to_dict(self.gt_cams)}
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "observations":
            raise InvalidInputError("not an observations.json document")
        gt = d.get("ground_truth")
        return cls(
            d["sequence_id"], np.asarray(d["landmarks"], dtype=np.float64),
            np.asarray(d["valid"], dtype=bool),
            _params_from_dict(gt["params"]) if gt else None,
            _cams_from_dict(gt["cameras"]) if gt else None,
            d.get("meta", {}),
        )

    def save(self, path):
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_json(path))


def config_hash(config):
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AnnotationRecord:
    sequence_id: str
    params: FaceParams | None
    cams: CameraParams | None
    method: str
    qc_status: str = "accepted"
    reason: str = ""
    config: dict = field(default_factory=dict)
    seed: int | None = None
    tool_version: str = __version__

    def __post_init__(self):
        if self.method not in ("neuface", "direct", "encoder-only"):
            raise InvalidInputError(f"unknown method tag {self.method!r}")
        if self.qc_status not in QC_STATUSES:
            raise InvalidInputError(f"unknown QC status {self.qc_status!r}")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "annotation",
            "sequence_id": self.sequence_id,
            "method": self.method,
            "qc_status": self.qc_status,
            "reason": self.reason,
            "params": _params_to_dict(self.params) if self.params is not None else None,
            "cameras": _cams_to_dict(self.cams) if self.cams is not None else None,
            "provenance": {"config": self.config, "config_hash": config_hash(self.config),
                           "seed": self.seed, "tool_version": self.tool_version},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "annotation":
            raise InvalidInputError("not an annotation.json document")
        prov = d["provenance"]
        return cls(
            d["sequence_id"],
            _params_from_dict(d["params"]) if d["params"] is not None else None,
            _cams_from_dict(d["cameras"]) if d["cameras"] is not None else None,
            d["method"], d["qc_status"], d.get("reason", ""), prov.get("config", {}),
            prov.get("seed"), prov.get("tool_version", __version__),
        )

    def save(self, path):
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_json(path))
