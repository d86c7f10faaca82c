"""
Factor graph for GMM-based TDOA localization and its Levenberg-Marquardt solver.

The graph is a pose chain: a prior on x_0, odometry factors between
consecutive poses and unary TDOA factors whose cost is the Max-Sum-Mixture
2-vector of the pair's noise model. The Gauss-Newton information matrix is
therefore block tridiagonal, which is exploited both for the damped step and
for exact marginal covariances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError, solve_triangular

from .errors import MissingTheta, SingularInformation, SolverDiverged
from .lie import (Pose, retract_arrays, se3_adjoint_arrays, se3_log_arrays,
                  se3_right_jacobian_inv, stack_poses, unstack_poses)
from .mixture import Gmm1D
from .msm import MsmConfig, msm_eval, msm_sq_norm
from .scene import Dataset, Pair, tdoa_arrays

log = logging.getLogger(__name__)

LAPLACE_JITTER = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    step_tolerance: float = 1e-8
    relative_loss_tolerance: float = 1e-10

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "damping_up", "damping_down",
                     "step_tolerance", "relative_loss_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _whitener(cov: np.ndarray) -> np.ndarray:
    """W with W^T W = cov^-1 (inverse of the lower Cholesky factor)."""
    L = np.linalg.cholesky(np.atleast_2d(cov))
    return solve_triangular(L, np.eye(L.shape[0]), lower=True)


@dataclass
class TdoaBlock:
    """All TDOA factors of one anchor pair."""

    pair: Pair
    gmm: Gmm1D
    pose_index: np.ndarray
    values: np.ndarray
    a_i: np.ndarray
    a_j: np.ndarray


@dataclass
class FactorGraph:
    num_poses: int
    rigid: bool
    prior_pose: Pose
    prior_whitener: np.ndarray
    odom_R: Optional[np.ndarray]
    odom_t: np.ndarray
    odom_whiteners: np.ndarray
    tdoa: List[TdoaBlock]
    lever_arm: np.ndarray
    msm: MsmConfig = field(default_factory=MsmConfig)

    @property
    def dof(self) -> int:
        return self.prior_pose.dof

    @property
    def num_factors(self) -> int:
        return 1 + (self.num_poses - 1) + sum(b.values.size for b in self.tdoa)

    def theta(self) -> Dict[Pair, Gmm1D]:
        return {b.pair: b.gmm for b in self.tdoa}


def build_graph(dataset: Dataset, theta: Dict[Pair, Gmm1D],
                msm: MsmConfig = MsmConfig()) -> FactorGraph:
    rigid = dataset.prior_pose.is_rigid
    if dataset.odometry:
        o_R, o_t = stack_poses([o.delta for o in dataset.odometry])
        W = np.stack([_whitener(o.noise_cov) for o in dataset.odometry])
    else:
        d = dataset.dof
        o_R = np.zeros((0, 3, 3)) if rigid else None
        o_t = np.zeros((0, 3 if rigid else d))
        W = np.zeros((0, d, d))
    blocks = []
    for pair, meas in dataset.by_pair().items():
        if pair not in theta:
            raise MissingTheta(f"no noise model for pair {pair}")
        i, j = pair
        blocks.append(TdoaBlock(
            pair=pair, gmm=theta[pair],
            pose_index=np.array([m.pose_index for m in meas], dtype=int),
            values=np.array([m.value for m in meas], dtype=float),
            a_i=dataset.anchors.anchor(i), a_j=dataset.anchors.anchor(j)))
    return FactorGraph(
        num_poses=dataset.num_poses, rigid=rigid, prior_pose=dataset.prior_pose,
        prior_whitener=_whitener(dataset.prior_cov), odom_R=o_R, odom_t=o_t,
        odom_whiteners=W, tdoa=blocks, lever_arm=dataset.rig.lever_arm, msm=msm)


def with_theta(graph: FactorGraph, theta: Dict[Pair, Gmm1D]) -> FactorGraph:
    """Same graph with the TDOA noise models replaced."""
    blocks = []
    for b in graph.tdoa:
        if b.pair not in theta:
            raise MissingTheta(f"no noise model for pair {b.pair}")
        blocks.append(TdoaBlock(b.pair, theta[b.pair], b.pose_index, b.values, b.a_i, b.a_j))
    return FactorGraph(graph.num_poses, graph.rigid, graph.prior_pose, graph.prior_whitener,
                       graph.odom_R, graph.odom_t, graph.odom_whiteners, blocks,
                       graph.lever_arm, graph.msm)


# ---------------------------------------------------------------------------
# residual evaluation and linearization
# ---------------------------------------------------------------------------

def _prior_terms(graph, R, t, jac):
    if graph.rigid:
        P = graph.prior_pose
        R_rel = P.rotation.T @ R[0]
        t_rel = P.rotation.T @ (t[0] - P.translation)
        e = se3_log_arrays(R_rel, t_rel)
        J = se3_right_jacobian_inv(e) if jac else None
    else:
        e = t[0] - graph.prior_pose.translation
        J = np.eye(e.size) if jac else None
    W = graph.prior_whitener
    return W @ e, (W @ J if jac else None)


def _odom_terms(graph, R, t, jac):
    """Whitened odometry residuals (T, d) and Jacobians w.r.t. prev/curr."""
    W = graph.odom_whiteners
    if graph.num_poses == 1:
        return np.zeros((0, W.shape[-1])), None, None
    if graph.rigid:
        Rp = R[:-1] @ graph.odom_R
        tp = (R[:-1] @ graph.odom_t[..., None])[..., 0] + t[:-1]
        RpT = np.swapaxes(Rp, -1, -2)
        R_rel = RpT @ R[1:]
        t_rel = (RpT @ (t[1:] - tp)[..., None])[..., 0]
        # log(pred^-1 curr); the residual is its negative, log(curr^-1 pred)
        e_inv = se3_log_arrays(R_rel, t_rel)
        e = -e_inv
        if jac:
            Jri = se3_right_jacobian_inv(e_inv)
            RcT = np.swapaxes(R[1:], -1, -2)
            Ad = se3_adjoint_arrays(RcT @ R[:-1], (RcT @ (t[:-1] - t[1:])[..., None])[..., 0])
            J_curr = -Jri
            J_prev = Jri @ Ad
    else:
        e = t[:-1] + graph.odom_t - t[1:]
        if jac:
            n, d = e.shape
            J_prev = np.broadcast_to(np.eye(d), (n, d, d))
            J_curr = -J_prev
    ew = (W @ e[..., None])[..., 0]
    if not jac:
        return ew, None, None
    return ew, W @ J_prev, W @ J_curr


def _tdoa_terms(graph, block, R, t, jac):
    idx = block.pose_index
    Rb = None if R is None else R[idx]
    out = tdoa_arrays(Rb, t[idx], graph.lever_arm, block.a_i, block.a_j, jacobian=jac)
    if not jac:
        r = block.values - out
        return r
    pred, dpred = out
    r = block.values - pred
    rho, drho = msm_eval(block.gmm, r, graph.msm)
    # d rho / d delta = drho/dr * dr/d delta, and dr/d delta = -dpred
    J = -drho[:, :, None] * dpred[:, None, :]
    return rho, J


def objective_arrays(graph: FactorGraph, R, t) -> float:
    """Sum of squared whitened residuals; TDOA terms use ||rho||^2 exactly."""
    e0, _ = _prior_terms(graph, R, t, False)
    eo, _, _ = _odom_terms(graph, R, t, False)
    total = float(e0 @ e0) + float(np.sum(eo * eo))
    for b in graph.tdoa:
        r = _tdoa_terms(graph, b, R, t, False)
        total += float(np.sum(msm_sq_norm(b.gmm, r, graph.msm)))
    return total


def objective(graph: FactorGraph, poses: Sequence[Pose]) -> float:
    R, t = stack_poses(poses)
    return objective_arrays(graph, R, t)


@dataclass
class Linearization:
    D: np.ndarray      # (n, d, d) diagonal blocks of J^T J
    B: np.ndarray      # (n-1, d, d) blocks H[t, t-1]
    g: np.ndarray      # (n, d) J^T r
    loss: float


def linearize(graph: FactorGraph, R, t) -> Linearization:
    n = graph.num_poses
    d = graph.dof
    D = np.zeros((n, d, d))
    g = np.zeros((n, d))
    e0, J0 = _prior_terms(graph, R, t, True)
    D[0] += J0.T @ J0
    g[0] += J0.T @ e0
    loss = float(e0 @ e0)
    B = np.zeros((max(n - 1, 0), d, d))
    if n > 1:
        eo, Jp, Jc = _odom_terms(graph, R, t, True)
        JpT = np.swapaxes(Jp, -1, -2)
        JcT = np.swapaxes(Jc, -1, -2)
        D[:-1] += JpT @ Jp
        D[1:] += JcT @ Jc
        B[:] = JcT @ Jp
        g[:-1] += (JpT @ eo[..., None])[..., 0]
        g[1:] += (JcT @ eo[..., None])[..., 0]
        loss += float(np.sum(eo * eo))
    for b in graph.tdoa:
        rho, J = _tdoa_terms(graph, b, R, t, True)
        JT = np.swapaxes(J, -1, -2)
        np.add.at(D, b.pose_index, JT @ J)
        np.add.at(g, b.pose_index, (JT @ rho[..., None])[..., 0])
        loss += float(np.sum(rho * rho))
    return Linearization(D, B, g, loss)


# ---------------------------------------------------------------------------
# block tridiagonal algebra
# ---------------------------------------------------------------------------

def _factor_chain(D, B):
    """Forward block elimination; returns Cholesky factors of the Schur blocks."""
    n = D.shape[0]
    facs = []
    S = D[0]
    for k in range(n):
        if k > 0:
            X = cho_solve(facs[-1], B[k - 1].T)
            S = D[k] - B[k - 1] @ X
        facs.append(cho_factor(0.5 * (S + S.T), lower=True, check_finite=True))
    return facs


def block_tridiag_solve(D, B, b, facs=None) -> np.ndarray:
    """Solve H x = b for SPD block tridiagonal H (diag D, sub-diagonal B)."""
    n = D.shape[0]
    if facs is None:
        facs = _factor_chain(D, B)
    y = np.array(b, dtype=float, copy=True)
    for k in range(1, n):
        y[k] = y[k] - B[k - 1] @ cho_solve(facs[k - 1], y[k - 1])
    x = np.zeros_like(y)
    x[-1] = cho_solve(facs[-1], y[-1])
    for k in range(n - 2, -1, -1):
        x[k] = cho_solve(facs[k], y[k] - B[k].T @ x[k + 1])
    return x


def block_tridiag_marginals(D, B, facs=None) -> np.ndarray:
    """Diagonal blocks of H^-1 via the backward (RTS-like) recursion."""
    n, d, _ = D.shape
    if facs is None:
        facs = _factor_chain(D, B)
    eye = np.eye(d)
    out = np.zeros_like(D)
    out[-1] = cho_solve(facs[-1], eye)
    for k in range(n - 2, -1, -1):
        Sinv = cho_solve(facs[k], eye)
        G = Sinv @ B[k].T
        out[k] = Sinv + G @ out[k + 1] @ G.T
        out[k] = 0.5 * (out[k] + out[k].T)
    return out


def dense_information(lin: Linearization) -> np.ndarray:
    n, d, _ = lin.D.shape
    H = np.zeros((n * d, n * d))
    for k in range(n):
        H[k * d:(k + 1) * d, k * d:(k + 1) * d] = lin.D[k]
    for k in range(n - 1):
        blk = lin.B[k]
        H[(k + 1) * d:(k + 2) * d, k * d:(k + 1) * d] = blk
        H[k * d:(k + 1) * d, (k + 1) * d:(k + 2) * d] = blk.T
    return H


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryEstimate:
    poses: List[Pose]
    covariances: List[np.ndarray]
    final_loss: float
    iterations: int = 0
    converged: bool = True
    last_step: float = 0.0


def solve_map(graph: FactorGraph, init: Sequence[Pose], cfg: SolverConfig = SolverConfig(),
              covariances: bool = True) -> TrajectoryEstimate:
    """Levenberg-Marquardt on the whitened residual stack.

    The dominant MSM component of each TDOA factor is frozen within a
    linearization and re-selected at every new linearization point.
    """
    if len(init) != graph.num_poses:
        raise ValueError(f"init has {len(init)} poses, graph has {graph.num_poses}")
    R, t = stack_poses(init)
    lin = linearize(graph, R, t)
    if not np.isfinite(lin.loss):
        raise SolverDiverged("initial loss is not finite")
    lam = cfg.initial_damping
    converged = False
    step_norm = np.inf
    it = 0
    while it < cfg.max_iterations:
        it += 1
        diag = np.einsum("nii->ni", lin.D)
        Dd = lin.D.copy()
        idx = np.arange(Dd.shape[-1])
        Dd[:, idx, idx] += lam * (diag + 1e-12)
        try:
            dx = block_tridiag_solve(Dd, lin.B, -lin.g)
        except (LinAlgError, ValueError):
            lam *= cfg.damping_up
            continue
        step_norm = float(np.linalg.norm(dx))
        R_new, t_new = retract_arrays(R, t, dx)
        new_loss = objective_arrays(graph, R_new, t_new)
        if step_norm < cfg.step_tolerance:
            # keep the last small step when it does not hurt
            if new_loss <= lin.loss:
                R, t = R_new, t_new
            converged = True
            break
        if not np.isfinite(new_loss):
            lam *= cfg.damping_up
            if lam > 1e16:
                raise SolverDiverged("loss is not finite")
            continue
        if new_loss <= lin.loss:
            decrease = lin.loss - new_loss
            R, t = R_new, t_new
            old_loss = lin.loss
            lin = linearize(graph, R, t)
            lam = max(lam * cfg.damping_down, 1e-12)
            if decrease <= cfg.relative_loss_tolerance * max(old_loss, 1e-300):
                converged = True
                break
        else:
            lam *= cfg.damping_up
            if lam > 1e16:
                # no descent direction left at machine precision
                converged = True
                break
    poses = unstack_poses(R, t)
    loss = objective_arrays(graph, R, t)
    if not np.isfinite(loss):
        raise SolverDiverged("final loss is not finite")
    covs = laplace_covariances(graph, poses) if covariances else []
    if not converged:
        log.info("solve_map stopped at max_iterations=%d", cfg.max_iterations)
    return TrajectoryEstimate(poses, covs, loss, it, converged, step_norm)


def laplace_covariances(graph: FactorGraph, solution: Sequence[Pose]) -> List[np.ndarray]:
    """Marginal per-pose covariances from the Gauss-Newton information matrix."""
    R, t = stack_poses(solution)
    lin = linearize(graph, R, t)
    try:
        facs = _factor_chain(lin.D, lin.B)
        D = lin.D
    except LinAlgError:
        idx = np.arange(lin.D.shape[-1])
        D = lin.D.copy()
        D[:, idx, idx] += LAPLACE_JITTER
        try:
            facs = _factor_chain(D, lin.B)
        except LinAlgError as exc:
            raise SingularInformation("information matrix is singular") from exc
    return list(block_tridiag_marginals(D, lin.B, facs))
