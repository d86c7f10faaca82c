import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from mixloc.mixture import Gmm1D
from mixloc.msm import (MsmConfig, dominant_mode, log_zeta, msm_cost, msm_eval, msm_jacobian,
                        msm_sq_norm)


def random_gmm(rng):
    K = int(rng.integers(1, 5))
    return Gmm1D(rng.dirichlet(np.ones(K)), rng.uniform(-2, 2, K), rng.uniform(0.01, 1.0, K))


def direct_score(g, r):
    """sum_k s_k exp(e_k(r)) evaluated in plain arithmetic."""
    s = g.weights / g.stds
    return float(np.sum(s * np.exp(-0.5 * ((r - g.means) / g.stds) ** 2)))


def test_single_component_mode_is_zero():
    g = Gmm1D.gaussian(0.3, 0.4)
    assert np.all(dominant_mode(g, np.linspace(-5, 5, 11)) == 0)


def test_nearest_mean_wins_under_equal_scales():
    g = Gmm1D([0.5, 0.5], [-1.0, 1.0], [0.5, 0.5])
    assert dominant_mode(g, -0.9) == 0


def test_dominant_mode_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        g = random_gmm(rng)
        r = rng.uniform(-4, 4)
        s = g.weights / g.stds
        scores = s * np.exp(-0.5 * ((r - g.means) / g.stds) ** 2)
        if np.sort(scores)[-1] <= 1e-250:
            continue  # plain arithmetic underflows; nothing to compare against
        assert dominant_mode(g, r) == int(np.argmax(scores))


def test_single_mode_second_entry_is_constant():
    g = Gmm1D.gaussian(0.0, 1.0)
    a, b = msm_cost(g, 0.0), msm_cost(g, 5.0)
    assert b[0] == 5.0
    assert abs(a[1] - b[1]) <= 1e-12
    assert a[1] == pytest.approx(np.sqrt(2 * np.log(1 + 10 * 1.0)), rel=1e-12)
    assert np.array_equal(msm_jacobian(g, 2.0), [1.0, 0.0])


def test_cost_identity_against_direct_evaluation():
    rng = np.random.default_rng(1)
    cfg = MsmConfig()
    for _ in range(2000):
        g = random_gmm(rng)
        r = rng.uniform(-3, 3)
        if direct_score(g, r) <= 1e-250:
            continue
        lhs = float(np.sum(msm_cost(g, r, cfg) ** 2))
        zeta = g.K * (g.weights / g.stds).max() + cfg.c
        rhs = 2 * np.log(zeta) - 2 * np.log(direct_score(g, r))
        assert abs(lhs - rhs) <= 1e-9 * max(abs(rhs), 1.0)


@given(st.integers(0, 10_000), st.floats(-50.0, 50.0))
def test_likelihood_equivalence(seed, r):
    g = random_gmm(np.random.default_rng(seed))
    lhs = -0.5 * float(np.sum(msm_cost(g, r) ** 2))
    rhs = float(g.logpdf(r)) + 0.5 * np.log(2 * np.pi) - log_zeta(g)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


@given(st.integers(0, 10_000), st.floats(-1e6, 1e6))
def test_second_entry_real_and_finite(seed, r):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    g = Gmm1D(rng.dirichlet(np.ones(K)), rng.uniform(-2, 2, K), rng.uniform(1e-6, 1.0, K))
    rho = msm_cost(g, r)
    assert np.all(np.isfinite(rho)) and rho[1] >= 0


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gaussian_degeneration(ra, rb):
    g = Gmm1D.gaussian(0.2, 0.7)
    da = msm_sq_norm(g, ra) - ((ra - 0.2) / 0.7) ** 2
    db = msm_sq_norm(g, rb) - ((rb - 0.2) / 0.7) ** 2
    assert abs(da - db) <= 1e-9


def test_monotone_likelihood():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        g = random_gmm(rng)
        ra, rb = rng.uniform(-3, 3, 2)
        sa, sb = direct_score(g, ra), direct_score(g, rb)
        if abs(sa - sb) <= 1e-9 * max(sa, sb):
            continue
        na = float(np.sum(msm_cost(g, ra) ** 2))
        nb = float(np.sum(msm_cost(g, rb) ** 2))
        assert (na < nb) == (sa > sb)


def test_jacobian_matches_finite_differences_away_from_boundaries():
    rng = np.random.default_rng(3)
    h = 1e-6
    checked = 0
    while checked < 1000:
        g = random_gmm(rng)
        r = rng.uniform(-3, 3)
        k = dominant_mode(g, r)
        if dominant_mode(g, r - 10 * h) != k or dominant_mode(g, r + 10 * h) != k:
            continue
        fd = (msm_cost(g, r + h) - msm_cost(g, r - h)) / (2 * h)
        J = msm_jacobian(g, r)
        assert np.max(np.abs(J - fd)) / max(np.max(np.abs(J)), 1.0) < 1e-5
        checked += 1


def test_one_sided_derivatives_agree_at_mode_boundary():
    g = Gmm1D([0.6, 0.4], [-0.5, 0.8], [0.3, 0.5])
    gap = lambda r: (np.log(g.weights[0] / g.stds[0]) - 0.5 * ((r - g.means[0]) / g.stds[0]) ** 2
                     - np.log(g.weights[1] / g.stds[1])
                     + 0.5 * ((r - g.means[1]) / g.stds[1]) ** 2)
    rb = brentq(gap, -0.5, 0.8, xtol=1e-15)
    h = 1e-7
    f = lambda r: float(np.sum(msm_cost(g, r) ** 2))
    left = (f(rb) - f(rb - h)) / h
    right = (f(rb + h) - f(rb)) / h
    assert abs(left - right) <= 1e-6 * max(1.0, abs(left))


def test_frozen_mode_evaluation():
    g = Gmm1D([0.5, 0.5], [-1.0, 1.0], [0.3, 0.3])
    rho_free = msm_eval(g, -0.2, jacobian=False)
    rho_frozen = msm_eval(g, -0.2, jacobian=False, mode=np.array(0))
    assert np.array_equal(rho_free, rho_frozen)
    other = msm_eval(g, 0.9, jacobian=False, mode=np.array(0))
    assert other[0] == pytest.approx((0.9 + 1.0) / 0.3)


def test_offset_must_be_positive():
    with pytest.raises(ValueError):
        MsmConfig(c=0.0)
