"""
Joint trajectory estimation and noise-model learning by alternation.

Inner step: MAP trajectory under the current per-pair noise models, plus
Laplace marginal covariances. Outer step: residuals and their propagated
variances at the new trajectory feed a per-pair mixture fit. The loop stops
when the objective gets worse, when it stops changing, or at the iteration
budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import MixlocError
from .lie import DEFAULT_KAPPA, Pose, sigma_points_arrays, stack_poses, weighted_variance
from .mixture import SIGMA_FLOOR, Gmm1D, fit_gauss
from .msm import MsmConfig
from .scene import Dataset, Pair, motion_covariance_step, motion_predict, tdoa_arrays
from .simulator import STREAM_VB_INIT, sub_seed
from .solver import (SolverConfig, TrajectoryEstimate, build_graph, objective, solve_map,
                     with_theta)
from .vbgmm import ResidualSample, VbPriors, fit_cgmm, fit_ugmm

log = logging.getLogger(__name__)

METHODS = ("ugmm", "cgmm", "gauss")
INIT_MODES = ("dead_reckoning", "gaussian_map")
THETA_INITS = ("zero_mean", "fitted")
CONVERGENCE_TOL = 1e-6
# relative difference below which two losses count as equal
LOSS_EQUALITY_TOL = 1e-12


@dataclass(frozen=True)
class BilevelConfig:
    max_outer_iterations: int = 10
    K: int = 3
    msm: MsmConfig = field(default_factory=MsmConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    priors: VbPriors = field(default_factory=VbPriors)
    kappa: float = DEFAULT_KAPPA
    init_mode: str = "dead_reckoning"
    # first noise model: zero-mean Gaussian at the residual RMS, or a full fit per method
    theta_init: str = "zero_mean"
    max_sweeps: int = 200
    vb_tol: float = 1e-6
    force_phi_zero: bool = False
    # compare consecutive iterates under the newest noise model (False: raw losses)
    compare_under_new_theta: bool = True

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.theta_init not in THETA_INITS:
            raise ValueError(f"theta_init must be one of {THETA_INITS}")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    previous_loss: float
    solver_iterations: int
    elbo: Dict[Pair, float]
    accepted: bool


@dataclass
class BilevelResult:
    trajectory: TrajectoryEstimate
    theta: Dict[Pair, Gmm1D]
    diagnostics: List[IterationRecord]
    termination: str
    method: str = "ugmm"
    error: Optional[str] = None

    @property
    def outer_iterations(self) -> int:
        return len(self.diagnostics)


# ---------------------------------------------------------------------------
# initialization and residual extraction
# ---------------------------------------------------------------------------

def dead_reckoning(dataset: Dataset) -> Tuple[List[Pose], List[np.ndarray]]:
    poses = [dataset.prior_pose]
    covs = [np.array(dataset.prior_cov, dtype=float)]
    for incr in dataset.odometry:
        poses.append(motion_predict(poses[-1], incr))
        covs.append(motion_covariance_step(covs[-1], incr))
    return poses, covs


def extract_residual_samples(dataset: Dataset, poses: Sequence[Pose],
                             covariances: Sequence[np.ndarray], pair: Pair,
                             kappa: float = DEFAULT_KAPPA, arrays: bool = False):
    """Residuals of one pair at the estimate and their sigma-point variances."""
    meas = dataset.by_pair().get(pair, [])
    idx = np.array([m.pose_index for m in meas], dtype=int)
    d = np.array([m.value for m in meas], dtype=float)
    if idx.size == 0:
        empty = np.zeros(0)
        return (empty, empty) if arrays else []
    R, t = stack_poses([poses[k] for k in idx])
    covs = np.stack([np.asarray(covariances[k], dtype=float) for k in idx])
    Rs, ts, w = sigma_points_arrays(R, t, covs, kappa)
    i, j = pair
    anchors = dataset.anchors
    pred = tdoa_arrays(Rs, ts, dataset.rig.lever_arm, anchors.anchor(i), anchors.anchor(j),
                       jacobian=False)
    r = d - pred[:, 0]
    phi = weighted_variance(pred, w)
    if arrays:
        return r, phi
    return [ResidualSample(float(a), float(b)) for a, b in zip(r, phi)]


def _fit(method, r, phi, cfg: BilevelConfig, seed: int):
    if method == "gauss":
        return fit_gauss(r), None
    if method == "cgmm":
        post, g = fit_cgmm(r, cfg.K, cfg.priors, seed, cfg.max_sweeps, cfg.vb_tol)
    else:
        if cfg.force_phi_zero:
            phi = np.zeros_like(phi)
        post, g = fit_ugmm((r, phi), cfg.K, cfg.priors, seed, cfg.max_sweeps, cfg.vb_tol)
    return g, post.elbo_trace[-1]


def learn_theta(dataset: Dataset, poses, covariances, method: str, cfg: BilevelConfig,
                seed: int, iteration: int):
    theta, elbos = {}, {}
    for k, pair in enumerate(dataset.pairs_present()):
        r, phi = extract_residual_samples(dataset, poses, covariances, pair, cfg.kappa,
                                          arrays=True)
        g, value = _fit(method, r, phi, cfg, sub_seed(seed, STREAM_VB_INIT, k, iteration))
        theta[pair] = g
        if value is not None:
            elbos[pair] = float(value)
    return theta, elbos


def zero_mean_theta(dataset: Dataset, poses, covariances, kappa: float = DEFAULT_KAPPA):
    """Per-pair zero-mean Gaussian whose std is the RMS residual at ``poses``.

    Drift in the initial trajectory shows up as a residual offset; fixing the
    mean at zero keeps that offset from being learned as a measurement bias.
    """
    theta = {}
    for pair in dataset.pairs_present():
        r, _ = extract_residual_samples(dataset, poses, covariances, pair, kappa, arrays=True)
        theta[pair] = Gmm1D.gaussian(0.0, max(float(np.sqrt(np.mean(r * r))), SIGMA_FLOOR))
    return theta


def initialize(dataset: Dataset, cfg: BilevelConfig = BilevelConfig()):
    """Initial poses and covariances (dead reckoning or a Gaussian-noise MAP)."""
    poses, covs = dead_reckoning(dataset)
    if cfg.init_mode == "dead_reckoning":
        return poses, covs
    graph = build_graph(dataset, zero_mean_theta(dataset, poses, covs, cfg.kappa), cfg.msm)
    est = solve_map(graph, poses, cfg.solver)
    return est.poses, est.covariances


# ---------------------------------------------------------------------------
# the alternation
# ---------------------------------------------------------------------------

def run_bilevel(dataset: Dataset, cfg: BilevelConfig = BilevelConfig(), seed: int = 0,
                method: str = "ugmm") -> BilevelResult:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    poses, covs = initialize(dataset, cfg)
    if cfg.theta_init == "zero_mean":
        theta = zero_mean_theta(dataset, poses, covs, cfg.kappa)
    else:
        theta, _ = learn_theta(dataset, poses, covs, method, cfg, seed, 0)
    graph = build_graph(dataset, theta, cfg.msm)
    current = TrajectoryEstimate(poses, covs, objective(graph, poses), 0, True)
    diagnostics: List[IterationRecord] = []
    termination = "MaxIterations"
    try:
        for it in range(1, cfg.max_outer_iterations + 1):
            est = solve_map(graph, current.poses, cfg.solver)
            new_theta, elbos = learn_theta(dataset, est.poses, est.covariances, method, cfg,
                                           seed, it)
            new_graph = with_theta(graph, new_theta)
            loss = objective(new_graph, est.poses)
            if cfg.compare_under_new_theta:
                prev_loss = objective(new_graph, current.poses)
            else:
                prev_loss = current.final_loss
            accepted = loss <= prev_loss + LOSS_EQUALITY_TOL * abs(prev_loss)
            diagnostics.append(IterationRecord(it, loss, prev_loss, est.iterations, elbos,
                                               accepted))
            log.debug("outer %d: loss %.6f prev %.6f", it, loss, prev_loss)
            if not accepted:
                termination = "LossIncreased"
                break
            est.final_loss = loss
            current, theta, graph = est, new_theta, new_graph
            if abs(prev_loss - loss) <= CONVERGENCE_TOL * abs(prev_loss):
                termination = "Converged"
                break
    except MixlocError as exc:
        if not diagnostics:
            raise
        return BilevelResult(current, theta, diagnostics, "Error", method, str(exc))
    return BilevelResult(current, theta, diagnostics, termination, method)


def run_baseline(dataset: Dataset, cfg: BilevelConfig = BilevelConfig(), mode: str = "gauss",
                 seed: int = 0) -> BilevelResult:
    """Same loop with the outer fit replaced by a single Gaussian or a C-GMM."""
    mode = mode.lower().replace("-", "")
    if mode not in ("gauss", "cgmm"):
        raise ValueError("baseline mode must be 'gauss' or 'cgmm'")
    return run_bilevel(dataset, cfg, seed, method=mode)
