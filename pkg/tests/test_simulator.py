import numpy as np
import pytest
from dataclasses import replace

from mixloc.bilevel import dead_reckoning, extract_residual_samples
from mixloc.errors import ConfigInvalid
from mixloc.experiments import StudyConfig, study_seed
from mixloc.lie import local
from mixloc.mixture import kl_divergence
from mixloc.scene import motion_predict, tdoa_residual
from mixloc.simulator import (TrajectorySpec, default_scenario, ground_truth, perturb_for_study,
                              simulate, study_scenario)
from mixloc.vbgmm import fit_cgmm

from conftest import noise_free


def same_pose(a, b):
    if not np.array_equal(a.translation, b.translation):
        return False
    return a.rotation is None and b.rotation is None or np.array_equal(a.rotation, b.rotation)


def datasets_equal(a, b):
    if len(a.tdoa) != len(b.tdoa) or len(a.odometry) != len(b.odometry):
        return False
    same = all(x == y for x, y in zip(a.tdoa, b.tdoa))
    same &= all(same_pose(x.delta, y.delta) and np.array_equal(x.noise_cov, y.noise_cov)
                for x, y in zip(a.odometry, b.odometry))
    return same and same_pose(a.prior_pose, b.prior_pose)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_same_config_same_dataset(dim):
    sc = default_scenario(dim, seed=9, T=50)
    assert datasets_equal(simulate(sc).dataset, simulate(sc).dataset)
    assert not datasets_equal(simulate(sc).dataset, simulate(replace(sc, seed=10)).dataset)


def test_two_dimensional_default_has_two_pairs():
    sim = simulate(default_scenario(2, seed=0, T=120))
    assert sim.dataset.pairs_present() == [(1, 2), (3, 4)]
    assert len(sim.dataset.tdoa) == 2 * 120


def test_zero_length_trajectory():
    sim = simulate(default_scenario(2, seed=0, T=0))
    assert len(sim.truth) == 1 and not sim.dataset.odometry and not sim.dataset.tdoa


def test_one_dimensional_path_must_stay_between_anchors():
    sc = default_scenario(1)
    bad = replace(sc, trajectory=TrajectorySpec("lissajous", center=(5.0,), amplitude=(5.0,),
                                                period=(80.0,), phase=(np.pi / 2,)))
    with pytest.raises(ConfigInvalid):
        simulate(bad)


@pytest.mark.parametrize("change", [
    dict(dimension=4), dict(T=-1), dict(odometry_std=(0.1, 0.1, 0.1)),
    dict(noise=((0.5, 0.0, 0.1), (0.6, 0.0, 0.1))), dict(noise=((1.0, 0.0, -0.1),)),
    dict(pairs=((1, 1),)), dict(pairs=((1, 9),)),
])
def test_invalid_scenarios_rejected(change):
    with pytest.raises(ConfigInvalid):
        simulate(replace(default_scenario(2, seed=0, T=10), **change))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_noise_free_residuals_vanish_at_truth(dim):
    sim = simulate(noise_free(default_scenario(dim, seed=2, T=80)))
    ds = sim.dataset
    r = [tdoa_residual(m, sim.truth[m.pose_index], ds.rig, ds.anchors) for m in ds.tdoa]
    assert np.max(np.abs(r)) < 1e-9


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_noise_free_odometry_composes_to_truth(dim):
    sim = simulate(noise_free(default_scenario(dim, seed=2, T=200)))
    pose = sim.truth[0]
    for incr in sim.dataset.odometry:
        pose = motion_predict(pose, incr)
    assert np.linalg.norm(local(sim.truth[-1], pose)) < 1e-9
    dr = dead_reckoning(sim.dataset)[0]
    assert max(np.linalg.norm(local(a, b)) for a, b in zip(dr, sim.truth)) < 1e-9


def test_deterministic_limbs_leave_only_noise_means():
    sc = replace(default_scenario(2, seed=3, T=50), odometry_std=(0.0,), prior_std=(0.0,),
                 noise=((1.0, 0.25, 0.0),))
    sim = simulate(sc)
    ds = sim.dataset
    r = np.array([tdoa_residual(m, sim.truth[m.pose_index], ds.rig, ds.anchors) for m in ds.tdoa])
    assert np.allclose(r, 0.25, atol=1e-9)


def test_residuals_at_truth_follow_the_noise_model():
    sim = simulate(default_scenario(2, seed=4, T=5000))
    covs = [np.zeros((2, 2))] * len(sim.truth)
    for pair, model in sim.theta.items():
        r, phi = extract_residual_samples(sim.dataset, sim.truth, covs, pair, arrays=True)
        assert np.all(phi == 0.0)
        _, g = fit_cgmm(r, 3, seed=0)
        assert kl_divergence(model, g) < 0.05


def test_perturbation_zero_level_and_scaling():
    truth = ground_truth(default_scenario(3, seed=0, T=30))
    poses, covs = perturb_for_study(truth, 0.0, 1.0, seed=1)
    assert all(p.allclose(t, atol=1e-15) for p, t in zip(poses, truth))
    assert np.all(covs == 0.0)
    _, c1 = perturb_for_study(truth, 3.0, 1.0, seed=1)
    p2, c2 = perturb_for_study(truth, 3.0, 1.9, seed=1)
    assert np.allclose(c2, 1.9 * c1, rtol=1e-15, atol=0)
    d = np.einsum("nii->ni", c1)
    assert np.all(d[:, :3] <= 0.035 * 3.0) and np.all(d[:, 3:] <= 0.05 * 3.0)


def test_perturbation_covariance_matches_scatter():
    truth = ground_truth(default_scenario(2, seed=0, T=20000))
    poses, covs = perturb_for_study(truth, 4.0, 1.0, seed=2)
    err = np.array([local(t, p) for t, p in zip(truth, poses)])
    z = err / np.sqrt(np.einsum("nii->ni", covs))
    assert abs(z.var() - 1.0) < 0.03


def test_study_scenario_single_pair():
    sim = simulate(study_scenario(N=300, seed=0))
    assert sim.dataset.pairs_present() == [(1, 2)] and len(sim.dataset.tdoa) == 300


def test_uncertainty_aware_fit_wins_at_level_five():
    cfg = StudyConfig(omegas=(5.0,), deltas=(1.0,), seeds=tuple(range(50)))
    rows = [row for s in cfg.seeds for row in study_seed(cfg, s)]
    wins = sum(row.improvement > 0 for row in rows)
    assert wins >= 40
