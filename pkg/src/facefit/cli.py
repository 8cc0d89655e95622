"""Command line entry point: ``facefit <subcommand>``.

Exit codes: 0 success, 2 invalid configuration or input, 3 I/O error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from .encoder import init_weights, output_size, pretrain
from .errors import FaceFitError
from .face_model import FaceModelAssets, FaceParams, build_synthetic_assets, skin
from .metrics import write_metrics_csv
from .optim.config import ConvergenceConfig, OptimConfig, direct_defaults, neural_defaults
from .optim.convergence import count_inversions, run_convergence_experiment
from .pipeline.annotate import annotate
from .pipeline.data import AnnotationRecord, ObservationSet, dump_json
from .pipeline.evaluate import evaluate
from .pipeline.objio import export_obj
from .pipeline.synth import DEFAULT_MODEL_DIMS, PretrainConfig, SequenceConfig, gen_sequence, sample_training_set

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
log = logging.getLogger("facefit")


class ConfigError(Exception):
    pass


def _read_config(path):
    if not path:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return cfg


def _dataclass_from(cls, d, name):
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**d)


def _observation_paths(spec):
    paths = []
    for item in spec:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.json"))))
        else:
            paths.append(item)
    return paths


def _load_observations(spec):
    return [ObservationSet.load(p) for p in _observation_paths(spec)]


def cmd_synth(args):
    cfg = _read_config(args.config)
    dims = {**DEFAULT_MODEL_DIMS, **cfg.get("model_dims", {})}
    n_seq = int(cfg.get("n_sequences", 10))
    seq_cfg = _dataclass_from(SequenceConfig, cfg.get("sequence", {}), "sequence")
    assets = build_synthetic_assets(args.seed, dims)
    os.makedirs(os.path.join(args.out, "observations"), exist_ok=True)
    assets.save(os.path.join(args.out, "assets.json"))
    for i in range(n_seq):
        obs = gen_sequence(args.seed + 1 + i, assets, seq_cfg, sequence_id=f"seq{i:04d}")
        obs.save(os.path.join(args.out, "observations", f"{obs.sequence_id}.json"))
    print(f"wrote assets and {n_seq} sequences to {args.out}")


def cmd_pretrain(args):
    cfg = _dataclass_from(PretrainConfig, _read_config(args.config), "pretrain")
    assets = FaceModelAssets.load(args.assets)
    x, y, _, _ = sample_training_set(args.seed, assets, cfg)
    w0 = init_weights(args.seed, {"d_in": 2 * assets.n_landmarks, "d_out": output_size(assets.dims),
                                  "width": cfg.width, "depth": cfg.depth})
    w, hist = pretrain(w0, x, y, assets.dims, epochs=cfg.epochs, lr=cfg.lr,
                       batch_size=cfg.batch_size, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    w.save(os.path.join(args.out, "encoder.json"), model_dims=assets.dims)
    dump_json({"history": hist, "seed": args.seed}, os.path.join(args.out, "pretrain_history.json"))
    print(f"regression loss {hist[0]:.6g} -> {hist[-1]:.6g}" if hist else "no training epochs")


def _fit(args, method, defaults):
    from .encoder import EncoderWeights
    raw = _read_config(args.config)
    cfg = defaults().replace(**raw) if raw else defaults()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    assets = FaceModelAssets.load(args.assets)
    encoder = EncoderWeights.load(args.encoder)
    observations = _load_observations(args.obs)
    records, reports = annotate(observations, assets, encoder, cfg, method, out_dir=args.out,
                                workers=args.workers)
    ok = sum(r.qc_status == "accepted" for r in records)
    print(f"{len(records)} sequences annotated ({ok} accepted) -> {args.out}")


def cmd_fit_neural(args):
    _fit(args, "neuface", neural_defaults)


def cmd_fit_direct(args):
    _fit(args, "direct", direct_defaults)


def cmd_eval(args):
    assets = FaceModelAssets.load(args.assets)
    by_id = {o.sequence_id: o for o in _load_observations(args.obs)}
    ann_paths = sorted(glob.glob(os.path.join(args.annotations, "*.annotation.json")))
    reports = []
    for path in ann_paths:
        rec = AnnotationRecord.load(path)
        if rec.params is None or rec.sequence_id not in by_id:
            continue
        reports.append(evaluate(by_id[rec.sequence_id], assets, rec.params, rec.cams, rec.method))
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), reports)
    print(f"evaluated {len(reports)} annotations -> {os.path.join(args.out, 'metrics.csv')}")


def cmd_converge(args):
    raw = _read_config(args.config)
    try:
        cfg = ConvergenceConfig.from_dict(raw) if raw else ConvergenceConfig()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if args.seed is not None:
        cfg.data_seed = args.seed
    table, _ = run_convergence_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    rates = [row["success_rate"] for row in table]
    stable = [{k: v for k, v in row.items() if k != "seconds"} for row in table]
    dump_json({"config": cfg.to_dict(), "table": stable, "inversions": count_inversions(rates)},
              os.path.join(args.out, "convergence.json"))
    print(f"{'width':>6} {'lr':>10} {'success':>8} {'median steps':>13} {'diverged':>9}")
    for row in table:
        steps = "-" if row["median_steps"] is None else f"{row['median_steps']:.0f}"
        print(f"{row['width']:>6} {row['lr']:>10.3g} {row['success_rate']:>8.2f} {steps:>13} {row['diverged']:>9}")


def cmd_export_obj(args):
    assets = FaceModelAssets.load(args.assets)
    if args.annotation:
        rec = AnnotationRecord.load(args.annotation)
        if rec.params is None:
            raise ConfigError("annotation has no fitted parameters")
        f, v = args.frame, args.view
        p = rec.params
        params = FaceParams(p.r[f, v], p.theta[f, v], p.beta[f, v], p.psi[f, v])
    else:
        params = FaceParams.zeros(assets.dims)
    mesh = skin(assets, params)
    export_obj(mesh, args.out, assets.faces)
    print(f"wrote {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="facefit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", required=True, help="output directory (or file for export-obj)")
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "generate synthetic assets and observation sets")
    p = add("pretrain", cmd_pretrain, "pretrain the landmark encoder on synthetic samples")
    p.add_argument("--assets", required=True)
    for name, func in (("fit-neural", cmd_fit_neural), ("fit-direct", cmd_fit_direct)):
        p = add(name, func, f"annotate sequences ({name})", seed_default=None)
        p.add_argument("--assets", required=True)
        p.add_argument("--encoder", required=True)
        p.add_argument("--obs", nargs="+", required=True, help="observation files or directories")
        p.add_argument("--workers", type=int, default=1)
    p = add("eval", cmd_eval, "metrics.csv from annotations and ground truth")
    p.add_argument("--assets", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--obs", nargs="+", required=True)
    add("converge", cmd_converge, "width sweep of gradient descent convergence", seed_default=None)
    p = add("export-obj", cmd_export_obj, "write one fitted mesh (or the template) as OBJ")
    p.add_argument("--assets", required=True)
    p.add_argument("--annotation")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--view", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, FaceFitError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
