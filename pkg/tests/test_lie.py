import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixloc.errors import AngleNearPi
from mixloc.lie import (Pose, local, propagate_scalar_variance, retract, se3_exp, se3_log,
                        sigma_points, so3_exp)

from conftest import random_cov, random_rigid

vec = st.floats(-3.0, 3.0, allow_nan=False)


def test_exp_of_zero_is_identity():
    T = se3_exp(np.zeros(6))
    assert np.allclose(T.rotation, np.eye(3))
    assert np.allclose(T.translation, 0.0)


def test_exp_quarter_turn_about_z():
    T = se3_exp([0, 0, 0, 0, 0, np.pi / 2])
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(T.rotation, expected, atol=1e-12)
    assert np.allclose(T.translation, 0.0)


def test_log_identity_and_pure_translation():
    assert np.allclose(se3_log(Pose.rigid()), 0.0)
    xi = se3_log(Pose.rigid(translation=(0.3, 0.0, 0.0)))
    assert np.allclose(xi, [0.3, 0, 0, 0, 0, 0], atol=1e-15)


def test_exp_log_roundtrip_seeded_draws():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        xi = np.concatenate([rng.uniform(-5, 5, 3), axis * rng.uniform(0, np.pi - 1e-3)])
        worst = max(worst, np.linalg.norm(se3_log(se3_exp(xi)) - xi))
    assert worst <= 1e-9


def test_pose_log_exp_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(200):
        T = random_rigid(rng)
        assert se3_exp(se3_log(T)).allclose(T, atol=1e-9)


@given(st.lists(vec, min_size=3, max_size=3), st.lists(vec, min_size=3, max_size=3),
       st.floats(0.0, np.pi - 1e-3))
def test_roundtrip_property(rho, axis, angle):
    axis = np.asarray(axis)
    n = np.linalg.norm(axis)
    phi = axis / n * angle if n > 1e-6 else np.zeros(3)
    xi = np.concatenate([rho, phi])
    assert np.linalg.norm(se3_log(se3_exp(xi)) - xi) <= 1e-9


def test_log_near_pi_raises():
    R = so3_exp([0.0, 0.0, np.pi - 1e-9])
    with pytest.raises(AngleNearPi):
        se3_log(Pose(np.zeros(3), R))


def test_retract_identity_and_scalar():
    rng = np.random.default_rng(2)
    T = random_rigid(rng)
    assert retract(T, np.zeros(6)).allclose(T, atol=1e-15)
    assert retract(Pose.scalar(3.0), [0.5]).translation[0] == 3.5


def test_retract_composition_first_order():
    rng = np.random.default_rng(3)
    for _ in range(200):
        T = random_rigid(rng)
        d1 = rng.uniform(-1e-3, 1e-3, 6)
        d2 = rng.uniform(-1e-3, 1e-3, 6)
        a = retract(retract(T, d1), d2)
        b = retract(T, d1 + d2)
        assert np.linalg.norm(local(b, a)) <= 2 * np.linalg.norm(d1) * np.linalg.norm(d2)


def test_retract_keeps_rotation_orthonormal():
    rng = np.random.default_rng(4)
    T = Pose.rigid()
    for _ in range(10_000):
        T = retract(T, 0.05 * rng.standard_normal(6))
    R = T.rotation
    assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-9


def test_local_inverts_retract():
    rng = np.random.default_rng(5)
    T = random_rigid(rng)
    d = 0.3 * rng.standard_normal(6)
    assert np.allclose(local(T, retract(T, d)), d, atol=1e-10)


def test_sigma_points_zero_covariance_collapse():
    rng = np.random.default_rng(6)
    T = random_rigid(rng)
    for p, _ in sigma_points(T, np.zeros((6, 6))):
        assert p.allclose(T, atol=1e-5)


def test_sigma_points_scalar_closed_form():
    pts = sigma_points(Pose.scalar(1.5), [[4.0]], kappa=2.0)
    xs = [p.translation[0] for p, _ in pts]
    ws = [w for _, w in pts]
    assert np.allclose(xs, [1.5, 1.5 + np.sqrt(12), 1.5 - np.sqrt(12)], atol=1e-12)
    assert np.allclose(ws, [2 / 3, 1 / 6, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sigma_weights_sum_to_one(dim):
    rng = np.random.default_rng(dim)
    mean = random_rigid(rng) if dim == 3 else Pose(rng.standard_normal(dim))
    n = 6 if dim == 3 else dim
    w = [wk for _, wk in sigma_points(mean, random_cov(rng, n))]
    assert abs(sum(w) - 1.0) <= 1e-12


def test_sigma_points_reproduce_linear_image():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((3, 2))
    b = rng.standard_normal(3)
    mean = Pose(rng.standard_normal(2))
    cov = random_cov(rng, 2, 0.5)
    pts = sigma_points(mean, cov)
    img = sum(w * (A @ p.translation + b) for p, w in pts)
    assert np.allclose(img, A @ mean.translation + b, atol=1e-12)


def test_propagate_constant_and_linear():
    mean = Pose.scalar(0.7)
    assert propagate_scalar_variance(mean, [[0.3]], lambda p: 4.0) <= 1e-12
    var = propagate_scalar_variance(mean, [[0.3]], lambda p: -2.0 * p.translation[0] + 1.0)
    assert abs(var - 4.0 * 0.3) <= 1e-12


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(-4, 4),
       st.floats(1e-4, 2.0), st.floats(-0.9, 0.9))
def test_propagate_exact_for_affine_planar(g, c, s, corr):
    g = np.asarray(g)
    cov = s * np.array([[1.0, corr], [corr, 1.0]])
    var = propagate_scalar_variance(Pose.planar(0.2, -0.4), cov,
                                    lambda p: g @ p.translation + c)
    assert abs(var - g @ cov @ g) <= 1e-12 * max(1.0, g @ cov @ g)
