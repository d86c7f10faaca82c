import numpy as np
import pytest
from dataclasses import replace

import mixloc.bilevel as bilevel
from mixloc.bilevel import (BilevelConfig, dead_reckoning, extract_residual_samples, initialize,
                            run_baseline, run_bilevel)
from mixloc.dataset_io import rmse
from mixloc.errors import SolverDiverged
from mixloc.lie import Pose, local, retract_arrays, se3_exp, stack_poses
from mixloc.scene import AnchorConstellation, Dataset, OdometryIncrement, SensorRig, tdoa_arrays
from mixloc.simulator import default_scenario, simulate
from mixloc.solver import build_graph, solve_map

from conftest import noise_free

FAST = BilevelConfig(max_outer_iterations=3)


def results_identical(a, b):
    if a.termination != b.termination or len(a.diagnostics) != len(b.diagnostics):
        return False
    for p, q in zip(a.trajectory.poses, b.trajectory.poses):
        if not np.array_equal(p.translation, q.translation):
            return False
    if any(not np.array_equal(c, d) for c, d in zip(a.trajectory.covariances,
                                                     b.trajectory.covariances)):
        return False
    if sorted(a.theta) != sorted(b.theta):
        return False
    if any(a.theta[k].triples() != b.theta[k].triples() for k in a.theta):
        return False
    return all(x.loss == y.loss and x.previous_loss == y.previous_loss
               for x, y in zip(a.diagnostics, b.diagnostics))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_dead_reckoning_exact_without_noise(dim):
    sim = simulate(noise_free(default_scenario(dim, seed=0, T=60)))
    poses, _ = initialize(sim.dataset)
    assert max(np.linalg.norm(local(a, b)) for a, b in zip(poses, sim.truth)) < 1e-9


def test_random_walk_covariance():
    T, s = 40, 0.07
    anchors = AnchorConstellation([[0.0, 0.0], [10.0, 0.0]], ((1, 2),))
    odo = [OdometryIncrement(Pose([0.1, 0.0]), s ** 2 * np.eye(2)) for _ in range(T)]
    P0 = np.diag([0.01, 0.02])
    ds = Dataset(anchors, SensorRig(), odo, [], Pose([1.0, 1.0]), P0)
    _, covs = dead_reckoning(ds)
    assert np.array_equal(covs[-1], P0 + T * s ** 2 * np.eye(2)) or \
        np.allclose(covs[-1], P0 + T * s ** 2 * np.eye(2), rtol=0, atol=1e-15)


def test_rigid_covariance_chain_matches_rollouts():
    sim = simulate(default_scenario(3, seed=1, T=20))
    ds = sim.dataset
    poses, covs = dead_reckoning(ds)
    n = 100_000
    rng = np.random.default_rng(0)
    R0, t0 = stack_poses([ds.prior_pose])
    R = np.broadcast_to(R0, (n, 3, 3))
    t = np.broadcast_to(t0, (n, 3))
    R, t = retract_arrays(R, t, rng.multivariate_normal(np.zeros(6), ds.prior_cov, n))
    for incr in ds.odometry:
        dR, dt = incr.delta.rotation, incr.delta.translation
        t = t + R @ dt
        R = R @ dR
        R, t = retract_arrays(R, t, rng.multivariate_normal(np.zeros(6), incr.noise_cov, n))
    mean = poses[-1]
    Rm_t = mean.rotation.T
    from mixloc.lie import se3_log_arrays
    err = se3_log_arrays(Rm_t @ R, ((t - mean.translation) @ Rm_t.T))
    mc = np.cov(err.T)
    assert abs(np.trace(covs[-1]) - np.trace(mc)) <= 0.10 * np.trace(mc)


def test_zero_covariance_gives_zero_phi():
    sim = simulate(default_scenario(2, seed=0, T=30))
    zeros = [np.zeros((2, 2))] * len(sim.truth)
    _, phi = extract_residual_samples(sim.dataset, sim.truth, zeros, (1, 2), arrays=True)
    assert np.all(phi == 0.0)


def test_scalar_phi_is_four_times_variance():
    sim = simulate(default_scenario(1, seed=0, T=30))
    rng = np.random.default_rng(1)
    covs = [np.array([[v]]) for v in rng.uniform(0.001, 0.05, len(sim.truth))]
    samples = extract_residual_samples(sim.dataset, sim.truth, covs, (1, 2))
    idx = [m.pose_index for m in sim.dataset.tdoa]
    for s, k in zip(samples, idx):
        assert s.phi == pytest.approx(4.0 * covs[k][0, 0], rel=1e-12)


def test_planar_phi_matches_monte_carlo():
    sim = simulate(default_scenario(2, seed=2, T=10))
    ds = sim.dataset
    rng = np.random.default_rng(3)
    covs = []
    for _ in sim.truth:
        A = rng.standard_normal((2, 2))
        covs.append(0.004 * (A @ A.T + np.eye(2)))
    _, phi = extract_residual_samples(ds, sim.truth, covs, (1, 2), arrays=True)
    for k, m in enumerate(ds.by_pair()[(1, 2)]):
        x = rng.multivariate_normal(sim.truth[m.pose_index].translation, covs[m.pose_index],
                                    100_000)
        pred = tdoa_arrays(None, x, None, ds.anchors.anchor(1), ds.anchors.anchor(2),
                           jacobian=False)
        assert abs(phi[k] - pred.var()) <= 0.05 * pred.var()


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_noise_free_run_converges_quickly(dim):
    sim = simulate(noise_free(default_scenario(dim, seed=0, T=80)))
    res = run_bilevel(sim.dataset, BilevelConfig(), seed=0, method="gauss")
    assert res.outer_iterations <= 2 and res.termination == "Converged"
    assert rmse(res.trajectory.poses, sim.truth) < 1e-6


@pytest.mark.parametrize("method", ["ugmm", "cgmm", "gauss"])
def test_same_seed_same_result(method):
    sim = simulate(default_scenario(2, seed=3, T=80))
    a = run_bilevel(sim.dataset, FAST, seed=5, method=method)
    b = run_bilevel(sim.dataset, FAST, seed=5, method=method)
    assert results_identical(a, b)


def test_cgmm_baseline_equals_phi_free_ugmm():
    sim = simulate(default_scenario(2, seed=4, T=80))
    a = run_baseline(sim.dataset, FAST, mode="CGmm", seed=2)
    b = run_bilevel(sim.dataset, replace(FAST, force_phi_zero=True), seed=2, method="ugmm")
    assert results_identical(a, b)


def test_gauss_baseline_close_to_known_noise_map():
    # 3-D: every pose is over-determined, so the learned sigma does not collapse
    ours, ref = [], []
    for seed in range(4):
        sc = replace(default_scenario(3, seed=seed, T=200), noise=((1.0, 0.0, 0.1),))
        sim = simulate(sc)
        res = run_baseline(sim.dataset, BilevelConfig(), mode="gauss", seed=0)
        oracle = solve_map(build_graph(sim.dataset, sim.theta), dead_reckoning(sim.dataset)[0])
        ours.append(rmse(res.trajectory.poses, sim.truth))
        ref.append(rmse(oracle.poses, sim.truth))
    assert abs(np.mean(ours) - np.mean(ref)) <= 0.05 * np.mean(ref)


def test_accepted_losses_monotone_and_budget_respected():
    sim = simulate(default_scenario(2, seed=6, T=100))
    cfg = BilevelConfig(max_outer_iterations=6)
    res = run_bilevel(sim.dataset, cfg, seed=0, method="ugmm")
    assert 1 <= res.outer_iterations <= 6
    for rec in res.diagnostics:
        assert rec.accepted == (rec.loss <= rec.previous_loss * (1 + 1e-12))
    assert all(rec.accepted for rec in res.diagnostics[:-1])
    if res.termination == "LossIncreased":
        assert not res.diagnostics[-1].accepted
    assert res.termination in ("Converged", "LossIncreased", "MaxIterations")


def test_error_after_first_iteration_keeps_best_iterate(monkeypatch):
    sim = simulate(default_scenario(2, seed=7, T=60))
    real = bilevel.solve_map
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] >= 2:
            raise SolverDiverged("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(bilevel, "solve_map", flaky)
    res = run_bilevel(sim.dataset, BilevelConfig(max_outer_iterations=5), seed=0, method="gauss")
    assert res.termination == "Error" and "injected" in res.error
    assert res.outer_iterations == 1 and len(res.trajectory.poses) == 61


def test_error_before_any_iteration_propagates(monkeypatch):
    sim = simulate(default_scenario(2, seed=7, T=20))

    def broken(*args, **kwargs):
        raise SolverDiverged("injected")

    monkeypatch.setattr(bilevel, "solve_map", broken)
    with pytest.raises(SolverDiverged):
        run_bilevel(sim.dataset, FAST, seed=0)


def test_invalid_arguments():
    sim = simulate(default_scenario(1, seed=0, T=10))
    with pytest.raises(ValueError):
        run_bilevel(sim.dataset, FAST, method="median")
    with pytest.raises(ValueError):
        run_baseline(sim.dataset, FAST, mode="ugmm")
    with pytest.raises(ValueError):
        BilevelConfig(max_outer_iterations=0)
    with pytest.raises(ValueError):
        BilevelConfig(init_mode="oracle")


def test_gaussian_map_initialization_runs():
    sim = simulate(default_scenario(2, seed=8, T=60))
    poses, covs = initialize(sim.dataset, BilevelConfig(init_mode="gaussian_map"))
    dr, _ = dead_reckoning(sim.dataset)
    assert rmse(poses, sim.truth) < rmse(dr, sim.truth)
    assert len(covs) == 61
