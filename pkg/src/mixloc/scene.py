"""Anchor constellations, TDOA and odometry models, residuals and Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import TagAtAnchor
from .lie import (Pose, hat, se3_adjoint, se3_log, se3_right_jacobian_inv)

AT_ANCHOR_TOL = 1e-9

Pair = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class AnchorConstellation:
    """Anchor positions (1-based indices in ``pairs``) and the TDOA pair set."""

    positions: np.ndarray
    pairs: Tuple[Pair, ...]

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        m = pos.shape[0]
        for i, j in pairs:
            if not (1 <= i <= m and 1 <= j <= m):
                raise ValueError(f"pair {(i, j)} references a missing anchor")
            if i == j:
                raise ValueError(f"pair {(i, j)} uses the same anchor twice")
            if np.linalg.norm(pos[i - 1] - pos[j - 1]) <= 1e-9:
                raise ValueError(f"pair {(i, j)} has coincident anchors")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def anchor(self, index: int) -> np.ndarray:
        return self.positions[index - 1]


@dataclass(frozen=True, eq=False)
class SensorRig:
    """Body-frame lever arm of the tag antenna (zeros for flat variants)."""

    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        l = np.array(self.lever_arm, dtype=float).reshape(-1)
        if not np.all(np.isfinite(l)):
            raise ValueError("lever arm must be finite")
        l.setflags(write=False)
        object.__setattr__(self, "lever_arm", l)


@dataclass(frozen=True)
class TdoaMeasurement:
    pair: Pair
    pose_index: int
    value: float


@dataclass(frozen=True, eq=False)
class OdometryIncrement:
    """Relative motion between consecutive poses with its noise covariance.

    ``delta`` is a displacement pose for flat variants and the increment
    transform for rigid ones.
    """

    delta: Pose
    noise_cov: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.array(self.noise_cov, dtype=float))
        if c.shape != (self.delta.dof, self.delta.dof):
            raise ValueError("odometry covariance does not match pose dof")
        if not np.allclose(c, c.T, atol=1e-10):
            raise ValueError("odometry covariance must be symmetric")
        c.setflags(write=False)
        object.__setattr__(self, "noise_cov", c)


@dataclass(eq=False)
class Dataset:
    anchors: AnchorConstellation
    rig: SensorRig
    odometry: List[OdometryIncrement]
    tdoa: List[TdoaMeasurement]
    prior_pose: Pose
    prior_cov: np.ndarray

    def __post_init__(self):
        self.prior_cov = np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        T = len(self.odometry)
        for m in self.tdoa:
            if not 0 <= m.pose_index <= T:
                raise ValueError(f"measurement pose index {m.pose_index} outside [0, {T}]")
            if not np.isfinite(m.value):
                raise ValueError("measurement value must be finite")

    @property
    def num_poses(self) -> int:
        return len(self.odometry) + 1

    @property
    def dof(self) -> int:
        return self.prior_pose.dof

    def pairs_present(self) -> List[Pair]:
        seen = []
        for m in self.tdoa:
            if m.pair not in seen:
                seen.append(m.pair)
        return seen

    def by_pair(self) -> Dict[Pair, List[TdoaMeasurement]]:
        out: Dict[Pair, List[TdoaMeasurement]] = {}
        for m in self.tdoa:
            out.setdefault(m.pair, []).append(m)
        return out


# ---------------------------------------------------------------------------
# TDOA model
# ---------------------------------------------------------------------------

def tag_position(pose: Pose, rig: SensorRig) -> np.ndarray:
    if pose.is_rigid:
        return pose.rotation @ rig.lever_arm + pose.translation
    return pose.translation


def tdoa_arrays(rotations: Optional[np.ndarray], translations: np.ndarray,
                lever_arm: Optional[np.ndarray], a_i: np.ndarray, a_j: np.ndarray,
                jacobian: bool = True):
    """Vectorized TDOA prediction and its right-perturbation Jacobian.

    Parameters
    ----------
    rotations : (..., 3, 3) array or None for flat poses
    translations : (..., d) array
    lever_arm : (3,) array, ignored for flat poses
    a_i, a_j : anchor positions broadcastable against ``translations``

    Returns
    -------
    pred : (...,) predicted ||p - a_j|| - ||p - a_i||
    jac : (..., dof) derivative of ``pred`` w.r.t. the tangent perturbation
        (only if ``jacobian``)
    """
    if rotations is None:
        tag = translations
    else:
        Cl = rotations @ lever_arm
        tag = Cl + translations
    vi = tag - a_i
    vj = tag - a_j
    ni = np.linalg.norm(vi, axis=-1)
    nj = np.linalg.norm(vj, axis=-1)
    if np.any(ni <= AT_ANCHOR_TOL) or np.any(nj <= AT_ANCHOR_TOL):
        raise TagAtAnchor("tag coincides with an anchor")
    pred = nj - ni
    if not jacobian:
        return pred
    g = vj / nj[..., None] - vi / ni[..., None]  # d pred / d tag
    if rotations is None:
        return pred, g
    # d tag / d(rho, phi) = [C, -C hat(l)]
    gC = (g[..., None, :] @ rotations)[..., 0, :]
    jac = np.concatenate([gC, -gC @ hat(lever_arm)], axis=-1)
    return pred, jac


def tdoa_predict(pose: Pose, rig: SensorRig, anchors: AnchorConstellation, pair: Pair) -> float:
    i, j = pair
    R = pose.rotation
    return float(tdoa_arrays(R, pose.translation, rig.lever_arm, anchors.anchor(i),
                             anchors.anchor(j), jacobian=False))


def tdoa_residual(meas: TdoaMeasurement, pose: Pose, rig: SensorRig,
                  anchors: AnchorConstellation) -> float:
    return meas.value - tdoa_predict(pose, rig, anchors, meas.pair)


def tdoa_jacobian(pose: Pose, rig: SensorRig, anchors: AnchorConstellation,
                  pair: Pair) -> np.ndarray:
    """Row vector d(prediction)/d(delta) at delta = 0."""
    i, j = pair
    _, jac = tdoa_arrays(pose.rotation, pose.translation, rig.lever_arm,
                         anchors.anchor(i), anchors.anchor(j))
    return np.asarray(jac, dtype=float)


# ---------------------------------------------------------------------------
# motion model
# ---------------------------------------------------------------------------

def motion_predict(prev: Pose, incr: OdometryIncrement) -> Pose:
    return prev @ incr.delta


def motion_residual(prev: Pose, curr: Pose, incr: OdometryIncrement) -> np.ndarray:
    """f(prev, u) - curr for flat poses, log(curr^-1 prev dT) for rigid ones."""
    pred = motion_predict(prev, incr)
    if prev.is_rigid:
        return se3_log(curr.inverse() @ pred)
    return pred.translation - curr.translation


def motion_jacobians(prev: Pose, curr: Pose, incr: OdometryIncrement):
    """Residual and its Jacobians w.r.t. right perturbations of prev and curr."""
    e = motion_residual(prev, curr, incr)
    if not prev.is_rigid:
        n = prev.dof
        return e, np.eye(n), -np.eye(n)
    # e = -log(pred^-1 curr), so the Jacobians are those of that log, negated
    Jr_inv = se3_right_jacobian_inv(-e)
    J_curr = -Jr_inv
    J_prev = Jr_inv @ se3_adjoint(curr.inverse() @ prev)
    return e, J_prev, J_curr


def motion_covariance_step(cov_prev: np.ndarray, incr: OdometryIncrement) -> np.ndarray:
    """Dead-reckoning covariance update F P F^T + Sigma_u."""
    if incr.delta.is_rigid:
        F = se3_adjoint(incr.delta.inverse())
        out = F @ cov_prev @ F.T + incr.noise_cov
    else:
        out = cov_prev + incr.noise_cov
    return 0.5 * (out + out.T)
