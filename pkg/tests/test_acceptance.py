"""Acceptance criteria 1-9, each reported as one pass/fail line."""
import filecmp
import json
import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.spatial.transform import Rotation

import oracles
from facefit.cli import main as cli_main
from facefit.diff import Tape, grad, grad_check, ops
from facefit.diff.core import value_of
from facefit.encoder import (EncoderInput, EncoderWeights, init_weights, output_size, pretrain, raw_forward,
                             split_output)
from facefit.estep import bootstrap_target_mesh, run_estep, smooth_quaternions
from facefit.face_model import FaceParams, build_synthetic_assets, skin, skin_canonical
from facefit.geometry import CameraParams, axis_angle_to_quat, project
from facefit.losses import (LossWeights, baseline_regularizers, l2d, l3d_landmark, l3d_vertex, l_multiview,
                            l_temporal)
from facefit.metrics import cvd, mpve, msi3d, nme
from facefit.optim.config import ConvergenceConfig, OptimConfig, direct_defaults, neural_defaults
from facefit.optim.convergence import count_inversions, run_convergence_experiment
from facefit.optim.fitting import direct_fit, encoder_predict, neuface_fit, objective
from facefit.pipeline.data import AnnotationRecord, ObservationSet
from facefit.pipeline.evaluate import evaluate
from facefit.pipeline.qc import qc_filter
from facefit.pipeline.synth import DEFAULT_MODEL_DIMS, PretrainConfig, gen_sequence, sample_training_set

N_POINTS = 100
N_INSTANCES = 1000
SEEDS = range(10)

# ---------------------------------------------------------------------------
# criterion 1: gradient correctness


def _unit_quats(rng, shape):
    q = rng.normal(size=shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q[q[..., 0] < 0] *= -1
    return q


def _gradient_cases(assets):
    """(name, f, point sampler) triples covering every primitive and composite.

    When ``f`` is None the sampler returns a (function, point) pair.
    """
    d = assets.dims
    nj = d["N_J"]
    fixed = np.random.default_rng(0)
    cw = fixed.normal(size=(3, 4))
    w9 = fixed.normal(size=(3, 3))

    def params_point(rng):
        return [rng.normal(0, .4, 3), rng.normal(0, .4, d["K_pose"]), rng.normal(0, .4, d["K_shape"]),
                rng.normal(0, .4, d["K_expr"])]

    def skin_f(r, th, be, ps):
        m = skin(assets, FaceParams(r, th, be, ps))
        return ops.sum(ops.mul(m.vertices, np.cos(assets.template))) + ops.sum(ops.square(m.landmarks3d))

    def project_f(pts, s, tx, ty):
        return ops.sum(ops.square(project(pts, CameraParams(s, tx, ty))))

    obs2d = fixed.normal(size=(2, 2, nj, 2))

    def l2d_f(lmk, cam):
        c = CameraParams(ops.getitem(cam, (Ellipsis, 0)), ops.getitem(cam, (Ellipsis, 1)),
                         ops.getitem(cam, (Ellipsis, 2)))
        return l2d(lmk, c, obs2d)

    def temporal_case(rng):
        # targets near the predictions, as the smoothing step produces them
        r = rng.normal(0, .5, (3, 2, 3))
        qh = ops.axis_angle_quat(r) + rng.normal(0, 0.05, (3, 2, 4))
        qh /= np.linalg.norm(qh, axis=-1, keepdims=True)
        return (lambda x: l_temporal(ops.axis_angle_quat(x), qh)), [r]

    m_target = fixed.normal(size=(2, 5, 3))

    def reg_f(r, th, be, ps):
        w = LossWeights(lam_r=0.5, lam_theta=1.5, lam_beta=2.0, lam_psi=0.7)
        return baseline_regularizers(FaceParams(r, th, be, ps), w)

    ref = fixed.normal(size=(6, 3))
    enc = init_weights(0, {"d_in": 2 * nj, "d_out": output_size(d), "width": 6, "depth": 2})
    feats = fixed.normal(size=(2, 2 * nj))

    def encoder_f(*flat):
        params, cam = split_output(raw_forward(EncoderWeights.from_flat(list(flat)), feats), d)
        return (ops.sum(ops.square(params.coeffs())) + ops.sum(ops.mul(params.r, 0.3))
                + ops.sum(ops.mul(cam.s, cam.tx)) + ops.sum(cam.ty))

    def enc_point(rng):
        flat = [rng.normal(0, 0.5, np.shape(a)) for a in enc.flat()]
        h, margin = feats, np.inf
        for W, b in zip(flat[:-2:2], flat[1:-2:2]):
            pre = h @ W.T + b
            margin, h = min(margin, np.abs(pre).min()), np.maximum(pre, 0.0)
        return flat if margin >= KINK_MARGIN else enc_point(rng)

    u = lambda *shape: (lambda rng: rng.normal(size=shape))
    return [
        ("add", lambda a, b: ops.sum(ops.square(ops.add(a, b))), lambda r: [r.normal(size=(3, 2)), r.normal(size=2)]),
        ("sub", lambda a, b: ops.sum(ops.square(ops.sub(a, b))), lambda r: [r.normal(size=4), r.normal(size=4)]),
        ("mul", lambda a, b: ops.sum(ops.mul(ops.mul(a, b), a)), lambda r: [r.normal(size=(2, 3)), r.normal(size=3)]),
        ("div", lambda a, b: ops.sum(ops.div(a, ops.add(ops.square(b), 0.5))), lambda r: [r.normal(size=4), r.normal(size=4)]),
        ("neg", lambda a: ops.sum(ops.mul(ops.neg(a), a)), lambda r: [r.normal(size=4)]),
        ("square", lambda a: ops.sum(ops.mul(ops.square(a), cw)), lambda r: [r.normal(size=(3, 4))]),
        ("sqrt", lambda a: ops.sum(ops.sqrt(ops.add(ops.square(a), 0.1))), lambda r: [r.normal(size=5)]),
        ("abs", lambda a: ops.sum(ops.mul(ops.absolute(a), cw)), lambda r: [r.normal(size=(3, 4))]),
        ("relu", lambda a: ops.sum(ops.mul(ops.relu(a), cw)), lambda r: [r.normal(size=(3, 4))]),
        ("softplus", lambda a: ops.sum(ops.mul(ops.softplus(a), cw)), lambda r: [r.normal(size=(3, 4))]),
        ("matmul", lambda a, b: ops.sum(ops.square(ops.matmul(a, b))), lambda r: [r.normal(size=(2, 3)), r.normal(size=(3, 4))]),
        ("einsum", lambda a, b: ops.sum(ops.square(ops.einsum("bij,bjk->bik", a, b))),
         lambda r: [r.normal(size=(2, 3, 2)), r.normal(size=(2, 2, 3))]),
        ("sum", lambda a: ops.sum(ops.square(ops.sum(a, axis=1))), lambda r: [r.normal(size=(3, 4))]),
        ("mean", lambda a: ops.sum(ops.square(ops.mean(a, axis=0))), lambda r: [r.normal(size=(3, 4))]),
        ("reshape", lambda a: ops.sum(ops.mul(ops.reshape(ops.square(a), (3, 4)), cw)), lambda r: [r.normal(size=(2, 6))]),
        ("getitem", lambda a: ops.sum(ops.square(ops.getitem(a, (slice(None), [0, 2, 2])))), lambda r: [r.normal(size=(3, 4))]),
        ("concat", lambda a, b: ops.sum(ops.mul(ops.concat([a, b], axis=-1), cw)), lambda r: [r.normal(size=(3, 1)), r.normal(size=(3, 3))]),
        ("stack", lambda a, b: ops.sum(ops.square(ops.stack([a, ops.mul(b, a)], axis=0))), lambda r: [r.normal(size=3), r.normal(size=3)]),
        ("norm", lambda a: ops.sum(ops.norm(a, axis=-1)), lambda r: [r.normal(size=(3, 4))]),
        ("rodrigues", lambda a: ops.sum(ops.mul(ops.rodrigues(a), w9)), lambda r: [r.normal(size=3)]),
        ("axis_angle_quat", lambda a: ops.sum(ops.mul(ops.axis_angle_quat(a), cw)), lambda r: [r.normal(size=(3, 3))]),
        ("skin", skin_f, params_point),
        ("project", project_f, lambda r: [r.normal(size=(2, 5, 3)), r.uniform(.5, 2, 2), r.normal(size=2), r.normal(size=2)]),
        ("l2d", l2d_f, lambda r: [r.normal(size=(2, 2, nj, 3)), r.uniform(.5, 2, (2, 2, 3))]),
        ("l_temporal", None, temporal_case),
        ("l_multiview", lambda m: l_multiview(m, m_target), lambda r: [r.normal(size=(2, 3, 5, 3))]),
        ("regularizers", reg_f, params_point),
        ("l3d_vertex", lambda p: l3d_vertex(p, ref), u(6, 3)),
        ("l3d_landmark", lambda p: l3d_landmark(p, ref), u(6, 3)),
        ("encoder", encoder_f, enc_point),
    ]


# Central differences with h = 1e-6 straddle an L1 or ReLU kink whenever a residual or
# pre-activation lies within ~h |J| of zero; such points carry no gradient information.
KINK_MARGIN = 1e-4
GRAD_H = 1e-6
GRAD_TOL = 1e-5
OBS_NOISE = 0.05


def _kink_margin(assets, params, cams, obs, targets, preacts=None):
    """Smallest distance to a non-differentiable point of the objective."""
    pred = project(skin(assets, params).landmarks3d, cams)
    gaps = [np.abs(np.asarray(pred) - obs).min(),
            np.abs(np.asarray(skin_canonical(assets, params).vertices) - targets.m_hat[:, None]).min(),
            # the temporal norm has a cone point where a prediction equals its smoothed target
            np.linalg.norm(axis_angle_to_quat(np.asarray(params.r)) - targets.q_hat, axis=-1).min()]
    if preacts is not None:
        gaps.append(np.abs(preacts).min())
    return min(gaps)


# Central-difference round-off is bounded by eps |f| / (2 h); a coordinate whose gradient is
# nonzero but below that bound over the tolerance cannot be assessed at the fixed h.
ROUNDOFF_SAFETY = 4.0


def _well_posed(func, point):
    single = isinstance(point, np.ndarray) or np.isscalar(point)
    arrays = [np.array(p, dtype=np.float64) for p in ([point] if single else point)]
    tape = Tape()
    xs = [tape.var(a) for a in arrays]
    out = func(*xs)
    fval = abs(float(value_of(out)))
    g = np.concatenate([np.ravel(v) for v in grad(tape, out, xs)])
    floor = ROUNDOFF_SAFETY * np.finfo(float).eps * max(fval, 1.0) / (2 * GRAD_H * GRAD_TOL)
    g = np.abs(g[g != 0])
    return g.size == 0 or g.min() >= floor


def _eq1_case(assets, rng):
    """Full neural objective at a random encoder weight vector and random sequence."""
    d = assets.dims
    nf, nv, nj = 3, 2, d["N_J"]
    w = init_weights(int(rng.integers(1 << 30)), {"d_in": 2 * nj, "d_out": output_size(d), "width": 4, "depth": 2})
    flat = [a + rng.normal(0, 0.1, np.shape(a)) for a in w.flat()]
    x = EncoderInput(rng.normal(size=(nf * nv, 2 * nj)), rng.normal(size=(nf * nv, 2)), rng.uniform(.5, 2, nf * nv))
    cfg = OptimConfig(weights=LossWeights(lam_temp=0.7, lam_view=1.3))

    def predict(ws):
        from facefit.encoder import denormalize_camera
        from facefit.optim.fitting import _reshape_cams, _reshape_params
        params, cams = split_output(raw_forward(EncoderWeights.from_flat(list(ws)), x.features), d)
        return _reshape_params(params, (nf, nv)), _reshape_cams(denormalize_camera(cams, x), (nf, nv))

    p0, c0 = predict(flat)
    if np.max(np.linalg.norm(np.asarray(p0.r), axis=-1)) > np.pi:
        return _eq1_case(assets, rng)   # resample: rotations outside the valid domain
    p0 = FaceParams(*(np.asarray(v) for v in (p0.r, p0.theta, p0.beta, p0.psi)))
    # observations near the prediction, as during a fit: L1 gradients keep their size while the
    # objective, and with it the finite-difference round-off, shrinks
    obs = np.asarray(project(skin(assets, p0).landmarks3d, c0)) + rng.normal(0, OBS_NOISE, (nf, nv, nj, 2))
    targets = run_estep(p0, assets, window=3)
    pre = x.features @ flat[0].T + flat[1]
    if _kink_margin(assets, p0, c0, obs, targets, pre) < KINK_MARGIN:
        return _eq1_case(assets, rng)

    def f(*ws):
        params, cams = predict(ws)
        return objective(assets, params, cams, obs, targets, cfg, "neuface")[0]

    return f, flat


def _eq5_case(assets, rng):
    """Full baseline objective in per frame-view parameters and cameras."""
    d = assets.dims
    nf, nv, nj = 3, 2, d["N_J"]
    lead = (nf, nv)
    point = [rng.normal(0, .4, lead + (3,)), rng.normal(0, .4, lead + (d["K_pose"],)),
             rng.normal(0, .4, lead + (d["K_shape"],)), rng.normal(0, .4, lead + (d["K_expr"],)),
             rng.uniform(.5, 2, lead), rng.normal(size=lead), rng.normal(size=lead)]
    obs = (np.asarray(project(skin(assets, FaceParams(*point[:4])).landmarks3d, CameraParams(*point[4:])))
           + rng.normal(0, OBS_NOISE, (nf, nv, nj, 2)))
    targets = run_estep(FaceParams(*point[:4]), assets, window=3)
    if _kink_margin(assets, FaceParams(*point[:4]), CameraParams(*point[4:]), obs, targets) < KINK_MARGIN:
        return _eq5_case(assets, rng)
    cfg = OptimConfig(weights=LossWeights(lam_temp=0.7, lam_view=1.3, lam_r=0.2, lam_theta=0.4,
                                          lam_beta=0.6, lam_psi=0.8))

    def f(r, th, be, ps, s, tx, ty):
        return objective(assets, FaceParams(r, th, be, ps), CameraParams(s, tx, ty), obs, targets, cfg,
                         "baseline")[0]

    return f, point


def test_criterion_1_gradient_correctness(acceptance_report):
    t0 = time.perf_counter()
    # odd N_J: a translation gradient of an L1 term sums N_J signs, so it can never cancel to
    # exactly 0, where the relative measure would only see finite-difference round-off
    assets = build_synthetic_assets(0, (16, 5, 2, 2, 1))
    rng = np.random.default_rng(2024)
    worst, rejected = {}, 0
    draws = [(name, (lambda f=f, s=sampler: (f, s(rng)) if f is not None else s(rng)))
             for name, f, sampler in _gradient_cases(assets)]
    draws += [(name, (lambda b=builder: b(assets, rng)))
              for name, builder in (("objective_neural", _eq1_case), ("objective_direct", _eq5_case))]
    for name, draw in draws:
        errs = []
        while len(errs) < N_POINTS:
            func, point = draw()
            if not _well_posed(func, point):
                rejected += 1
                continue
            errs.append(grad_check(func, point, h=GRAD_H))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = worst[top] < GRAD_TOL and elapsed < 60
    acceptance_report(1, "gradient correctness", ok,
                      f"{len(worst)} functions x {N_POINTS} points, max rel err {worst[top]:.2e} ({top}), "
                      f"{rejected} ill-conditioned draws resampled, "
                      f"{elapsed:.1f}s")
    assert worst[top] < GRAD_TOL, worst
    assert elapsed < 60


# ---------------------------------------------------------------------------
# criterion 2: oracle equivalence


def test_criterion_2_oracle_equivalence(acceptance_report):
    t0 = time.perf_counter()
    assets = build_synthetic_assets(1, (12, 4, 2, 2, 1))
    d = assets.dims
    rng = np.random.default_rng(77)
    worst = {}

    def upd(name, a, b):
        worst[name] = max(worst.get(name, 0.0), float(np.max(np.abs(np.asarray(a) - np.asarray(b)))))

    for _ in range(N_INSTANCES):
        p = FaceParams(rng.normal(0, .8, 3), rng.normal(0, .5, d["K_pose"]), rng.normal(0, .5, d["K_shape"]),
                       rng.normal(0, .5, d["K_expr"]))
        m = skin(assets, p)
        v, l = oracles.skin(assets, p.r, p.theta, p.beta, p.psi)
        upd("skin", m.vertices, v)
        upd("skin", m.landmarks3d, l)

        pts = rng.normal(size=(4, 3))
        s, tx, ty = rng.uniform(.5, 2), rng.normal(), rng.normal()
        upd("project", project(pts, CameraParams(s, tx, ty)), oracles.project(pts, s, tx, ty))

        lmk = rng.normal(size=(2, 2, 3, 3))
        cam = rng.uniform(.5, 2, (2, 2, 3))
        obs = rng.normal(size=(2, 2, 3, 2))
        upd("l2d", l2d(lmk, CameraParams(cam[..., 0], cam[..., 1], cam[..., 2]), obs),
            oracles.l2d(lmk, cam, obs))

        q = _unit_quats(rng, (3, 2))
        qh = q + rng.normal(0, .1, q.shape)
        qh /= np.linalg.norm(qh, axis=-1, keepdims=True)
        upd("l_temporal", l_temporal(q, qh), oracles.l_temporal(q, qh))

        mv = rng.normal(size=(2, 3, 4, 3))
        tg = rng.normal(size=(2, 4, 3))
        upd("l_multiview", l_multiview(mv, tg), oracles.l_multiview(mv, tg))

        rp = [rng.normal(size=(3, k)) for k in (3, d["K_pose"], d["K_shape"], d["K_expr"])]
        lams = rng.uniform(0, 3, 4)
        w = LossWeights(lam_r=lams[0], lam_theta=lams[1], lam_beta=lams[2], lam_psi=lams[3])
        upd("regularizers", baseline_regularizers(FaceParams(*rp), w), oracles.regularizers(*rp, lams))

        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        upd("l3d", l3d_vertex(a, b), oracles.mean_distance(a, b))
        upd("l3d", l3d_landmark(a, b), oracles.mean_distance(a, b))

        meshes = rng.normal(size=(2, 3, 4, 3))
        upd("cvd", cvd(meshes), oracles.cvd(meshes))
        tracks = rng.normal(size=(6, 3, 3))
        ref = oracles.msi3d(tracks, 1e-8)
        upd("msi3d(rel)", msi3d(tracks) / ref, 1.0)
        pr, gt = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
        upd("nme", nme(pr, gt, eye_pair=(0, 1)), oracles.nme(pr, gt, (0, 1)))
        upd("mpve", mpve(a, b), oracles.mean_distance(a, b))
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = worst[top] <= 1e-9 and elapsed < 60
    acceptance_report(2, "oracle equivalence", ok,
                      f"{len(worst)} functions x {N_INSTANCES} instances, max abs diff {worst[top]:.2e} ({top}), "
                      f"{elapsed:.1f}s")
    assert worst[top] <= 1e-9, worst
    assert elapsed < 60


# ---------------------------------------------------------------------------
# criteria 3-5: comparative runs on shared synthetic sequences

ABLATIONS = {
    "l2d_only": {"lam_temp": 0.0, "lam_view": 0.0},
    "l2d_view": {"lam_temp": 0.0},
    "l2d_temp": {"lam_view": 0.0},
}


@pytest.fixture(scope="module")
def comparative_runs():
    """Pretrain one encoder, then fit 10 sequences with every driver and ablation."""
    t0 = time.perf_counter()
    assets = build_synthetic_assets(0, DEFAULT_MODEL_DIMS)
    pcfg = PretrainConfig()
    x, y, _, _ = sample_training_set(1, assets, pcfg)
    w0 = init_weights(0, {"d_in": 2 * assets.n_landmarks, "d_out": output_size(assets.dims),
                          "width": pcfg.width, "depth": pcfg.depth})
    enc, _ = pretrain(w0, x, y, assets.dims, epochs=pcfg.epochs, lr=pcfg.lr, batch_size=pcfg.batch_size)
    timings = {"pretrain": time.perf_counter() - t0, "neuface": 0.0, "direct": 0.0, "ablations": 0.0}
    runs = []
    defaults = LossWeights()
    for seed in SEEDS:
        obs = gen_sequence(500 + seed, assets)
        row = {}
        p0, c0 = encoder_predict(enc, obs, assets)
        row["init"] = evaluate(obs, assets, p0, c0, "encoder-only")
        t = time.perf_counter()
        fit = neuface_fit(obs, assets, enc, neural_defaults())
        row["neuface"] = evaluate(obs, assets, fit.params, fit.cams, "neuface")
        row["neuface_loss"] = (fit.history["total"][0], fit.final_loss)
        timings["neuface"] += time.perf_counter() - t
        t = time.perf_counter()
        dfit = direct_fit(obs, assets, p0, c0, direct_defaults())
        row["direct"] = evaluate(obs, assets, dfit.params, dfit.cams, "direct")
        timings["direct"] += time.perf_counter() - t
        t = time.perf_counter()
        for name, w in ABLATIONS.items():
            cfg = neural_defaults(weights={**defaults.__dict__, **w})
            f = neuface_fit(obs, assets, enc, cfg)
            row[name] = evaluate(obs, assets, f.params, f.cams, "neuface")
        timings["ablations"] += time.perf_counter() - t
        runs.append(row)
    return runs, timings


def test_criterion_3_neural_fit_efficacy(comparative_runs, acceptance_report):
    runs, timings = comparative_runs
    checks = []
    for r in runs:
        a, b = r["init"], r["neuface"]
        checks.append({"cvd": b.cvd < a.cvd, "msi_lmk": b.msi3d_lmk > a.msi3d_lmk,
                       "msi_vtx": b.msi3d_vtx > a.msi3d_vtx, "nme": b.nme <= 1.05 * a.nme})
    wins = sum(all(c.values()) for c in checks)
    per = {k: sum(c[k] for c in checks) for k in checks[0]}
    runtime = timings["pretrain"] + timings["neuface"]
    ok = wins >= 7 and runtime < 300
    acceptance_report(3, "neural fit vs encoder init", ok,
                      f"{wins}/10 seeds satisfy all conditions (per condition {per}), {runtime:.0f}s")
    assert all(r["neuface_loss"][1] <= r["neuface_loss"][0] for r in runs)
    assert wins >= 7
    assert runtime < 300


def test_criterion_4_neural_vs_direct(comparative_runs, acceptance_report):
    runs, timings = comparative_runs
    wins = sum(r["neuface"].mpve <= r["direct"].mpve for r in runs)
    ratio = np.median([r["neuface"].mpve / r["direct"].mpve for r in runs])
    ok = wins >= 7 and timings["direct"] < 300
    acceptance_report(4, "MPVE neural <= direct", ok,
                      f"{wins}/10 seeds, median MPVE ratio {ratio:.3f}, direct fits {timings['direct']:.0f}s")
    assert wins >= 7
    assert timings["direct"] < 300


def test_criterion_5_ablation_directions(comparative_runs, acceptance_report):
    runs, timings = comparative_runs
    a = sum(r["l2d_only"].nme < r["init"].nme for r in runs)
    b = sum(r["l2d_view"].cvd < r["l2d_only"].cvd for r in runs)
    c = sum(r["l2d_temp"].msi3d_lmk > r["l2d_only"].msi3d_lmk and r["l2d_temp"].msi3d_vtx > r["l2d_only"].msi3d_vtx
            for r in runs)
    ok = min(a, b, c) >= 7 and timings["ablations"] < 600
    acceptance_report(5, "ablation directions", ok,
                      f"L2D lowers NME {a}/10, +multiview lowers CVD {b}/10, +temporal raises MSI {c}/10, "
                      f"{timings['ablations']:.0f}s")
    assert a >= 7 and b >= 7 and c >= 7
    assert timings["ablations"] < 600


# ---------------------------------------------------------------------------
# criterion 6: width sweep of gradient descent


def test_criterion_6_convergence_sweep(acceptance_report):
    t0 = time.perf_counter()
    cfg = ConvergenceConfig()
    assert cfg.widths == [8, 32, 128, 512] and cfg.depth == 3 and cfg.n == 16
    assert len(cfg.seeds) == 20 and cfg.eps == 1e-3 and cfg.max_steps == 50_000
    table, trials = run_convergence_experiment(cfg)
    elapsed = time.perf_counter() - t0
    rates = [row["success_rate"] for row in table]
    inv = count_inversions(rates)
    largest = table[-1]
    ok = inv <= 1 and largest["success_rate"] >= 0.95 and largest["diverged"] == 0 and elapsed < 600
    acceptance_report(6, "width sweep", ok,
                      f"success {dict(zip(cfg.widths, rates))}, inversions {inv}, "
                      f"m=512 divergences {largest['diverged']}, checkpoint decrease "
                      f"{largest['decrease_fraction']:.3f}, {elapsed:.0f}s")
    assert inv <= 1
    assert largest["success_rate"] >= 0.95
    assert largest["diverged"] == 0
    assert largest["decrease_fraction"] >= 0.95
    assert elapsed < 600


# ---------------------------------------------------------------------------
# criterion 7: QC exactness


def test_criterion_7_qc_exactness(acceptance_report):
    t0 = time.perf_counter()
    nf, nv = 4, 2
    obs = ObservationSet("qc", np.zeros((nf, nv, 3, 2)), np.ones((nf, nv), dtype=bool))

    def record(norm):
        beta = np.zeros((nf, nv, 3))
        beta[..., 1] = norm
        z = lambda k: np.zeros((nf, nv, k))
        return AnnotationRecord("qc", FaceParams(z(3), z(2), beta, z(2)),
                                CameraParams(np.ones((nf, nv)), z(1)[..., 0], z(1)[..., 0]), "neuface")

    outcomes = {n: qc_filter(record(n), obs).qc_status for n in (1.0 - 1e-9, 1.0, 1.0 + 1e-9, 0.5, 1.2)}
    expected = {1.0 - 1e-9: "accepted", 1.0: "accepted", 1.0 + 1e-9: "rejected-shape", 0.5: "accepted",
                1.2: "rejected-shape"}
    detection = []
    for f in range(nf):
        for v in range(nv):
            bad = ObservationSet("qc", obs.landmarks, np.ones((nf, nv), dtype=bool))
            bad.valid[f, v] = False
            detection.append(qc_filter(record(0.5), bad).qc_status == "rejected-detection")
    elapsed = time.perf_counter() - t0
    ok = outcomes == expected and all(detection) and elapsed < 1
    acceptance_report(7, "QC exactness", ok,
                      f"boundary 1.0 +/- 1e-9 {outcomes}, detection rejections {sum(detection)}/{len(detection)}, "
                      f"{elapsed * 1000:.0f}ms")
    assert outcomes == expected
    assert all(detection)
    assert elapsed < 1


# ---------------------------------------------------------------------------
# criterion 8: determinism of the command line pipeline

PIPE_SYNTH = {"n_sequences": 3}
PIPE_PRETRAIN = {"n_samples": 500, "epochs": 10, "width": 64, "depth": 3}
PIPE_FIT = {"max_iters": 60}


def _run_pipeline(root, seed=7):
    os.makedirs(root, exist_ok=True)
    cfgs = {}
    for name, obj in (("synth", PIPE_SYNTH), ("pretrain", PIPE_PRETRAIN), ("fit", PIPE_FIT)):
        cfgs[name] = os.path.join(root, f"{name}.json")
        with open(cfgs[name], "w") as fh:
            json.dump(obj, fh)
    data = os.path.join(root, "data")
    steps = [
        ["synth", "--seed", str(seed), "--config", cfgs["synth"], "--out", data],
        ["pretrain", "--seed", str(seed), "--config", cfgs["pretrain"], "--assets", f"{data}/assets.json",
         "--out", f"{root}/enc"],
        ["fit-neural", "--seed", str(seed), "--config", cfgs["fit"], "--assets", f"{data}/assets.json",
         "--encoder", f"{root}/enc/encoder.json", "--obs", f"{data}/observations", "--out", f"{root}/fit"],
        ["eval", "--assets", f"{data}/assets.json", "--annotations", f"{root}/fit/annotations",
         "--obs", f"{data}/observations", "--out", f"{root}/eval"],
    ]
    for argv in steps:
        assert cli_main(argv) == 0, argv


def _tree(root):
    out = []
    for base, _, files in os.walk(root):
        out += [os.path.relpath(os.path.join(base, f), root) for f in files]
    return sorted(out)


def test_criterion_8_determinism(tmp_path, acceptance_report):
    t0 = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    _run_pipeline(str(a))
    _run_pipeline(str(b))
    files = _tree(a)
    same = files == _tree(b) and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    elapsed = time.perf_counter() - t0
    ok = same and elapsed < 300
    acceptance_report(8, "determinism", ok,
                      f"{len(files)} output files byte-identical across two runs: {same}, {elapsed:.0f}s")
    assert same
    assert elapsed < 300


# ---------------------------------------------------------------------------
# criterion 9: E-step properties


def _acc_variance(q):
    """Total variance (trace of covariance) of the quaternion second difference."""
    a = q[2:] - 2 * q[1:-1] + q[:-2]
    return float(a.reshape(len(a), -1).var(axis=0).sum())


def _random_rotation_sequence(rng):
    n = int(rng.integers(5, 60))
    drift = np.cumsum(rng.normal(0, rng.uniform(0, 0.2), (n, 3)), axis=0)
    jitter = rng.normal(0, rng.uniform(0, 0.5), (n, 3))
    q = Rotation.from_rotvec(drift + jitter).as_quat()[:, [3, 0, 1, 2]]
    for f in range(1, n):
        if np.dot(q[f], q[f - 1]) < 0:
            q[f] = -q[f]
    return q[:, None]


def _sign_continuous(q):
    q = q.copy()
    for f in range(1, len(q)):
        flip = np.sum(q[f] * q[f - 1], axis=-1) < 0
        q[f][flip] *= -1
    return q


def test_criterion_9_estep_properties(acceptance_report):
    t0 = time.perf_counter()
    counts = {"sequences": 0, "violations": 0}

    @settings(max_examples=200, deadline=None, derandomize=True, suppress_health_check=list(HealthCheck))
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([3, 5, 7, 9]))
    def smoothing_never_increases_acceleration_variance(seed, window):
        q = _random_rotation_sequence(np.random.default_rng(seed))
        qh = _sign_continuous(smooth_quaternions(q, window))
        counts["sequences"] += 1
        before, after = _acc_variance(q), _acc_variance(qh)
        if after > before * (1 + 1e-12) + 1e-15:
            counts["violations"] += 1
        assert after <= before * (1 + 1e-12) + 1e-15

    smoothing_never_increases_acceleration_variance()

    assets = build_synthetic_assets(0, (64, 8, 4, 4, 2))
    rng = np.random.default_rng(5)
    d = assets.dims
    one = [rng.normal(0, .3, (6, 1, k)) for k in (3, d["K_pose"], d["K_shape"], d["K_expr"])]
    consensus = FaceParams(*(np.repeat(v, 3, axis=1) for v in one))
    targets = run_estep(consensus, assets)
    idem = l_multiview(skin_canonical(assets, consensus).vertices, targets.m_hat)
    # a second E-step on the consensus reproduces the same target
    again = bootstrap_target_mesh(np.repeat(targets.m_hat[:, None], 3, axis=1), targets.weights_used)
    elapsed = time.perf_counter() - t0
    ok = counts["violations"] == 0 and idem == 0.0 and np.array_equal(again, targets.m_hat) and elapsed < 30
    acceptance_report(9, "E-step properties", ok,
                      f"{counts['sequences']} random sequences, {counts['violations']} variance increases; "
                      f"consensus l_multiview = {idem!r}, {elapsed:.1f}s")
    assert idem == 0.0
    assert np.array_equal(again, targets.m_hat)
    assert elapsed < 30
