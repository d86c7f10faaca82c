"""
Pose algebra for 1-D, 2-D and SE(3) states and sigma-point propagation.

Tangent vectors of rigid poses are ordered (translation rho, rotation phi).
Perturbations are applied on the right: ``retract(T, d) = T @ exp(d^)``.

Most primitives accept stacked inputs (leading batch axes) so that the solver
and the residual-uncertainty extraction can evaluate thousands of poses
without Python loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AngleNearPi, CovarianceNotPSD

# below this angle the closed forms lose digits; switch to Taylor series
_SMALL_ANGLE = 1e-3
_SMALL_ANGLE_Q = 0.2
PI_MARGIN = 1e-6
ORTHO_TOL = 1e-9
CHOL_JITTER = 1e-12
DEFAULT_KAPPA = 2.0


@dataclass(frozen=True, eq=False)
class Pose:
    """A 1-D, 2-D or rigid 3-D pose.

    Flat poses carry only ``translation`` (shape (1,) or (2,)); rigid poses
    carry a 3x3 ``rotation`` as well.
    """

    translation: np.ndarray
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(-1)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        if self.rotation is not None:
            R = np.array(self.rotation, dtype=float).reshape(3, 3)
            if t.shape != (3,):
                raise ValueError("rigid pose needs a 3-vector translation")
            R.setflags(write=False)
            object.__setattr__(self, "rotation", R)
        elif t.shape[0] not in (1, 2):
            raise ValueError("flat pose must be 1-D or 2-D")

    @classmethod
    def scalar(cls, x: float) -> "Pose":
        return cls(np.array([x], dtype=float))

    @classmethod
    def planar(cls, x: float, y: float) -> "Pose":
        return cls(np.array([x, y], dtype=float))

    @classmethod
    def rigid(cls, rotation=None, translation=(0.0, 0.0, 0.0)) -> "Pose":
        if rotation is None:
            rotation = np.eye(3)
        return cls(np.asarray(translation, dtype=float), np.asarray(rotation, dtype=float))

    @property
    def is_rigid(self) -> bool:
        return self.rotation is not None

    @property
    def dof(self) -> int:
        return 6 if self.is_rigid else self.translation.shape[0]

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix (rigid poses only)."""
        if not self.is_rigid:
            raise ValueError("matrix() is defined for rigid poses only")
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "Pose":
        if self.is_rigid:
            Rt = self.rotation.T
            return Pose(-Rt @ self.translation, Rt)
        return Pose(-self.translation)

    def compose(self, other: "Pose") -> "Pose":
        if self.is_rigid != other.is_rigid:
            raise ValueError("cannot compose poses of different variants")
        if self.is_rigid:
            return Pose(self.rotation @ other.translation + self.translation,
                        self.rotation @ other.rotation)
        return Pose(self.translation + other.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        if self.is_rigid != other.is_rigid:
            return False
        ok = np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        if self.is_rigid:
            ok = ok and np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
        return bool(ok)

    def __repr__(self):
        if self.is_rigid:
            return f"Pose(rigid, t={self.translation.tolist()})"
        return f"Pose({self.translation.tolist()})"


def identity_like(pose: Pose) -> Pose:
    if pose.is_rigid:
        return Pose.rigid()
    return Pose(np.zeros_like(pose.translation))


# ---------------------------------------------------------------------------
# so(3) / SO(3)
# ---------------------------------------------------------------------------

def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector; works on stacks (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def _so3_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with series near zero."""
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / t ** 2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / t ** 3)
    return a, b, c


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula for (..., 3) rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b, _ = _so3_coeffs(theta)
    K = hat(phi)
    K2 = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    _, b, c = _so3_coeffs(theta)
    K = hat(phi)
    return np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    d = np.where(small, 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
                 1.0 / t ** 2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))
    K = hat(phi)
    return np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of (..., 3, 3) rotation matrices.

    Raises AngleNearPi when any angle is within ``PI_MARGIN`` of pi.
    """
    R = np.asarray(R, dtype=float)
    v = 0.5 * vee(R - np.swapaxes(R, -1, -2))
    s = np.linalg.norm(v, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta > np.pi - PI_MARGIN):
        raise AngleNearPi(f"rotation angle {float(np.max(theta)):.9f} too close to pi")
    small = theta < _SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    scale = np.where(small, 1.0 + theta ** 2 / 6.0 + 7.0 * theta ** 4 / 360.0, theta / safe_s)
    return scale[..., None] * v


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(R.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


# ---------------------------------------------------------------------------
# se(3) / SE(3)
# ---------------------------------------------------------------------------

def se3_exp_arrays(xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batch exponential: (..., 6) -> rotations (..., 3, 3), translations (..., 3)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = (so3_left_jacobian(phi) @ rho[..., None])[..., 0]
    return R, t


def se3_log_arrays(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    phi = so3_log(R)
    rho = (so3_left_jacobian_inv(phi) @ np.asarray(t, dtype=float)[..., None])[..., 0]
    return np.concatenate([rho, phi], axis=-1)


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape != (6,):
        raise ValueError("se3_exp needs a 6-vector")
    R, t = se3_exp_arrays(xi)
    return Pose(t, R)


def se3_log(pose: Pose) -> np.ndarray:
    if not pose.is_rigid:
        raise ValueError("se3_log needs a rigid pose")
    return se3_log_arrays(pose.rotation, pose.translation)


def _q_coeffs(theta):
    small = theta < _SMALL_ANGLE_Q
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    c1 = np.where(small, 1 / 6 - t2 / 120 + t2 ** 2 / 5040 - t2 ** 3 / 362880, (t - np.sin(t)) / t ** 3)
    c2 = np.where(small, 1 / 24 - t2 / 720 + t2 ** 2 / 40320 - t2 ** 3 / 3628800,
                  (t ** 2 + 2 * np.cos(t) - 2) / (2 * t ** 4))
    c3 = np.where(small, 1 / 120 - t2 / 2520 + t2 ** 2 / 120960 - t2 ** 3 / 9979200,
                  (2 * t - 3 * np.sin(t) + t * np.cos(t)) / (2 * t ** 5))
    return c1, c2, c3


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """6x6 left Jacobian of SE(3) for (rho, phi) ordering (stackable)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(phi, axis=-1)
    c1, c2, c3 = _q_coeffs(theta)
    P, Rh = hat(phi), hat(rho)
    PR, RP = P @ Rh, Rh @ P
    PRP = PR @ P
    Q = (0.5 * Rh
         + c1[..., None, None] * (PR + RP + PRP)
         + c2[..., None, None] * (P @ PR + RP @ P - 3 * PRP)
         + c3[..., None, None] * (PRP @ P + P @ PRP))
    J = so3_left_jacobian(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., :3, 3:] = Q
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    J = se3_left_jacobian(xi)
    Jinv = so3_left_jacobian_inv(xi[..., 3:])
    out = np.zeros_like(J)
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., :3, 3:] = -Jinv @ J[..., :3, 3:] @ Jinv
    return out


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def se3_adjoint(pose: Pose) -> np.ndarray:
    R, t = pose.rotation, pose.translation
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[:3, 3:] = hat(t) @ R
    return Ad


# ---------------------------------------------------------------------------
# pose-level operations
# ---------------------------------------------------------------------------

def _check_ortho(R: np.ndarray) -> np.ndarray:
    err = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    if np.any(err > ORTHO_TOL):
        return orthonormalize(R)
    return R


def retract(pose: Pose, delta) -> Pose:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != pose.dof:
        raise ValueError(f"delta has {delta.shape[0]} components, pose has {pose.dof} dof")
    if not pose.is_rigid:
        return Pose(pose.translation + delta)
    dR, dt = se3_exp_arrays(delta)
    R = _check_ortho(pose.rotation @ dR)
    return Pose(pose.rotation @ dt + pose.translation, R)


def retract_arrays(rotations: Optional[np.ndarray], translations: np.ndarray,
                   deltas: np.ndarray):
    """Vectorized ``retract`` over stacks; ``rotations`` is None for flat poses."""
    deltas = np.asarray(deltas, dtype=float)
    if rotations is None:
        return None, translations + deltas
    dR, dt = se3_exp_arrays(deltas)
    R = _check_ortho(rotations @ dR)
    t = (rotations @ dt[..., None])[..., 0] + translations
    return R, t


def local(a: Pose, b: Pose) -> np.ndarray:
    """Tangent vector d with retract(a, d) == b."""
    if a.is_rigid:
        return se3_log(a.inverse() @ b)
    return b.translation - a.translation


# ---------------------------------------------------------------------------
# sigma points
# ---------------------------------------------------------------------------

def _jittered_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors; matrices that fail get CHOL_JITTER * I added first.

    An all-zero covariance maps to a zero factor so its sigma points coincide exactly.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(cov.shape[-1])
    flat = cov.reshape(-1, *cov.shape[-2:])
    out = np.empty_like(flat)
    for k, c in enumerate(flat):
        if not np.any(c):
            out[k] = 0.0  # exactly certain state: every sigma point is the mean
            continue
        try:
            out[k] = np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            try:
                out[k] = np.linalg.cholesky(c + CHOL_JITTER * eye)
            except np.linalg.LinAlgError as exc:
                raise CovarianceNotPSD(str(exc)) from exc
    return out.reshape(cov.shape)


def _sigma_offsets(cov: np.ndarray, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    """Signed sigma offsets (..., 2L, L) and weights (2L+1,)."""
    cov = np.asarray(cov, dtype=float)
    L = cov.shape[-1]
    if L + kappa <= 0:
        raise ValueError("kappa must satisfy L + kappa > 0")
    S = _jittered_cholesky(cov)
    S = np.sqrt(L + kappa) * S
    cols = np.swapaxes(S, -1, -2)  # row i is column i of S
    offsets = np.concatenate([cols, -cols], axis=-2)
    w = np.full(2 * L + 1, 1.0 / (2.0 * (L + kappa)))
    w[0] = kappa / (L + kappa)
    return offsets, w


def sigma_points(mean: Pose, cov, kappa: float = DEFAULT_KAPPA) -> List[Tuple[Pose, float]]:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.dof, mean.dof):
        raise ValueError("covariance does not match pose dof")
    offsets, w = _sigma_offsets(cov, kappa)
    points = [(mean, float(w[0]))]
    for k, d in enumerate(offsets):
        points.append((retract(mean, d), float(w[k + 1])))
    return points


def propagate_scalar_variance(mean: Pose, cov, f: Callable[[Pose], float],
                              kappa: float = DEFAULT_KAPPA) -> float:
    """Sigma-point variance of the scalar ``f`` under N(mean, cov) on the tangent space."""
    pts = sigma_points(mean, cov, kappa)
    vals = np.array([f(p) for p, _ in pts], dtype=float)
    w = np.array([wk for _, wk in pts])
    return float(weighted_variance(vals, w))


def sigma_points_arrays(rotations: Optional[np.ndarray], translations: np.ndarray,
                        covs: np.ndarray, kappa: float = DEFAULT_KAPPA):
    """Batched sigma points for n poses.

    Returns rotations (n, 2L+1, 3, 3) or None, translations (n, 2L+1, d)
    and the shared weights (2L+1,). Point 0 of every row is the mean.
    """
    offsets, w = _sigma_offsets(covs, kappa)
    n, m = offsets.shape[0], offsets.shape[1] + 1
    if rotations is None:
        t = np.concatenate([translations[:, None, :], translations[:, None, :] + offsets], axis=1)
        return None, t, w
    Rb = np.broadcast_to(rotations[:, None], (n, m - 1, 3, 3))
    tb = np.broadcast_to(translations[:, None], (n, m - 1, 3))
    R, t = retract_arrays(Rb, tb, offsets)
    R = np.concatenate([rotations[:, None], R], axis=1)
    t = np.concatenate([translations[:, None], t], axis=1)
    return R, t, w


def weighted_variance(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Sigma-point variance along the last axis."""
    # centre on the first (mean) point so identical values give exactly zero
    d = values - values[..., :1]
    mean = d @ w
    return np.maximum(((d - mean[..., None]) ** 2) @ w, 0.0)


def stack_poses(poses: Sequence[Pose]):
    """(rotations or None, translations) arrays for a homogeneous pose list."""
    t = np.stack([p.translation for p in poses])
    if poses[0].is_rigid:
        return np.stack([p.rotation for p in poses]), t
    return None, t


def unstack_poses(rotations, translations) -> List[Pose]:
    if rotations is None:
        return [Pose(t) for t in translations]
    return [Pose(t, R) for R, t in zip(rotations, translations)]


def se3_adjoint_arrays(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Stacked adjoints (..., 6, 6) of poses given as rotation/translation stacks."""
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = hat(t) @ R
    return out
