import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import oracles
from conftest import random_params
from facefit.errors import DegenerateWindowError, InvalidConfigError, InvariantViolation
from facefit.estep import bootstrap_target_mesh, run_estep, smooth_quaternions
from facefit.face_model import FaceParams, skin_canonical
from facefit.losses import l_multiview


def _zrot_quat(deg):
    h = np.radians(deg) / 2
    return np.array([np.cos(h), 0.0, 0.0, np.sin(h)])


def test_constant_sequence_unchanged():
    q = np.tile(_zrot_quat(25.0), (7, 2, 1))
    np.testing.assert_allclose(smooth_quaternions(q, 5), q, atol=1e-15)


def test_sign_flips_represent_same_rotation():
    q = _zrot_quat(40.0)
    out = smooth_quaternions(np.stack([q, -q, q])[:, None], 3)
    for o in out[:, 0]:
        assert abs(abs(np.dot(o, q)) - 1.0) < 1e-12


def test_middle_output_matches_normalized_mean():
    q = np.stack([_zrot_quat(d) for d in (0.0, 10.0, 20.0)])[:, None]
    mean = q[:, 0].sum(axis=0)
    np.testing.assert_allclose(smooth_quaternions(q, 3)[1, 0], mean / np.linalg.norm(mean), atol=1e-9)


def test_window_validation():
    q = np.tile(_zrot_quat(0.0), (4, 1, 1))
    with pytest.raises(InvalidConfigError):
        smooth_quaternions(q, 4)
    with pytest.raises(InvalidConfigError):
        smooth_quaternions(q, 0)


def test_degenerate_window():
    # consecutive dots are 0, so no sign flip happens and the 4-frame window sums to 0
    q = np.array([[1.0, 0, 0, 0], [0.0, 1, 0, 0], [-1.0, 0, 0, 0], [0.0, -1, 0, 0]])[:, None]
    with pytest.raises(DegenerateWindowError):
        smooth_quaternions(q, 5)


def test_target_of_identical_views(rng):
    m = rng.normal(size=(3, 5, 3))
    w = rng.uniform(0.05, 1, (3, 5))
    np.testing.assert_array_equal(bootstrap_target_mesh(np.repeat(m[:1], 3, axis=0), w), m[0])


@pytest.mark.parametrize("w_low", [1.0, 1e-4])
def test_dominant_weight(rng, w_low):
    m = rng.normal(size=(2, 6, 3))
    w = np.stack([np.ones(6), np.full(6, w_low)])
    out = bootstrap_target_mesh(m, w)
    if w_low == 1.0:
        np.testing.assert_allclose(out, m.mean(axis=0), atol=1e-12)
    else:
        assert np.abs(out - m[0]).max() <= 1e-3 * np.abs(m[1] - m[0]).max()


def test_target_matches_weighted_mean_oracle(rng):
    m = rng.normal(size=(3, 8, 3))
    w = rng.uniform(0.05, 1, (3, 8))
    np.testing.assert_allclose(bootstrap_target_mesh(m, w), oracles.weighted_mean_mesh(m, w), atol=1e-12)


def test_zero_weight_rejected(rng):
    with pytest.raises(InvariantViolation):
        bootstrap_target_mesh(rng.normal(size=(2, 3, 3)), np.zeros((2, 3)))


def test_static_single_view(small_assets, rng):
    p = random_params(rng, small_assets.dims)
    batch = FaceParams(*(np.broadcast_to(v, (6, 1) + v.shape).copy() for v in (p.r, p.theta, p.beta, p.psi)))
    t = run_estep(batch, small_assets)
    q = Rotation.from_rotvec(p.r).as_quat()[[3, 0, 1, 2]]
    q *= np.sign(q[0])
    np.testing.assert_allclose(t.q_hat, np.broadcast_to(q, (6, 1, 4)), atol=1e-12)
    canon = skin_canonical(small_assets, batch).vertices
    np.testing.assert_array_equal(t.m_hat, canon[:, 0])


def test_two_identical_views(small_assets, rng):
    p = random_params(rng, small_assets.dims, batch=(4, 1))
    two = FaceParams(*(np.repeat(v, 2, axis=1) for v in (p.r, p.theta, p.beta, p.psi)))
    t = run_estep(two, small_assets)
    canon = skin_canonical(small_assets, two).vertices
    np.testing.assert_array_equal(t.m_hat, canon[:, 1])
    assert l_multiview(canon, t.m_hat) == 0.0


def test_estep_deterministic(small_assets, rng):
    p = random_params(rng, small_assets.dims, batch=(8, 3))
    a, b = run_estep(p, small_assets), run_estep(p, small_assets)
    np.testing.assert_array_equal(a.m_hat, b.m_hat)
    np.testing.assert_array_equal(a.q_hat, b.q_hat)
    q = np.stack([[Rotation.from_rotvec(r).as_quat()[[3, 0, 1, 2]] for r in fr] for fr in p.r])
    assert np.all(np.sum(a.q_hat * q, axis=-1) >= 0)
    np.testing.assert_allclose(np.linalg.norm(a.q_hat, axis=-1), 1.0, atol=1e-12)
