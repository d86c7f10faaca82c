"""
Max-Sum-Mixture square-root cost for GMM-distributed scalar residuals.

For a mixture with s_k = pi_k / sigma_k and e_k(r) = -((r - mu_k)/sigma_k)^2 / 2
the 2-vector

    rho_1 = (r - mu_d) / sigma_d
    rho_2 = sqrt(-2 ln(sum_k s_k exp(e_k - e_d) / zeta)),  zeta = K max_k s_k + c

(d = dominant component) satisfies ||rho||^2 = 2 ln zeta - 2 ln sum_k s_k exp(e_k),
i.e. it is the negative log-likelihood up to a constant and can be fed to a
Gauss-Newton style solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import Gmm1D, logsumexp_last

ROOT_GUARD = 1e-8


@dataclass(frozen=True)
class MsmConfig:
    c: float = 10.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("MSM offset c must be positive")


def _terms(gmm: Gmm1D, r):
    r = np.asarray(r, dtype=float)
    log_s = np.log(gmm.weights) - np.log(gmm.stds)
    z = (r[..., None] - gmm.means) / gmm.stds
    e = -0.5 * z * z
    return log_s, e


def log_zeta(gmm: Gmm1D, cfg: MsmConfig = MsmConfig()) -> float:
    s = gmm.weights / gmm.stds
    return float(np.log(gmm.K * s.max() + cfg.c))


def dominant_mode(gmm: Gmm1D, r):
    """Index of argmax_k s_k exp(e_k(r)); lowest index wins ties."""
    log_s, e = _terms(gmm, r)
    k = np.argmax(log_s + e, axis=-1)
    return int(k) if np.ndim(k) == 0 else k


def msm_eval(gmm: Gmm1D, r, cfg: MsmConfig = MsmConfig(), jacobian: bool = True,
             mode=None):
    """Vectorized MSM cost (..., 2) and optionally d rho / d r (..., 2).

    ``mode`` lets the caller freeze the dominant component; by default it is
    taken at ``r``.
    """
    r = np.asarray(r, dtype=float)
    log_s, e = _terms(gmm, r)
    if mode is None:
        mode = np.argmax(log_s + e, axis=-1)
    mode = np.asarray(mode)
    mu_d = gmm.means[mode]
    sd_d = gmm.stds[mode]
    e_d = np.take_along_axis(e, mode[..., None], axis=-1)
    a = log_s + e - e_d
    lse = logsumexp_last(a)
    rho1 = (r - mu_d) / sd_d
    rho2 = np.sqrt(np.maximum(2.0 * log_zeta(gmm, cfg) - 2.0 * lse, 0.0))
    rho = np.stack([rho1, rho2], axis=-1)
    if not jacobian:
        return rho
    w = np.exp(a - lse[..., None])
    de = -(r[..., None] - gmm.means) / gmm.stds ** 2
    de_d = -(r - mu_d) / sd_d ** 2
    dlse = (w * de).sum(axis=-1) - de_d
    safe = np.where(rho2 < ROOT_GUARD, 1.0, rho2)
    drho2 = np.where(rho2 < ROOT_GUARD, 0.0, -dlse / safe)
    jac = np.stack([np.broadcast_to(1.0 / sd_d, drho2.shape), drho2], axis=-1)
    return rho, jac


def msm_cost(gmm: Gmm1D, r: float, cfg: MsmConfig = MsmConfig()) -> np.ndarray:
    return msm_eval(gmm, float(r), cfg, jacobian=False)


def msm_jacobian(gmm: Gmm1D, r: float, cfg: MsmConfig = MsmConfig()) -> np.ndarray:
    return msm_eval(gmm, float(r), cfg)[1]


def msm_sq_norm(gmm: Gmm1D, r, cfg: MsmConfig = MsmConfig()):
    """||rho(r)||^2 evaluated directly as 2 ln zeta - 2 ln sum_k s_k exp(e_k)."""
    log_s, e = _terms(gmm, r)
    return 2.0 * log_zeta(gmm, cfg) - 2.0 * logsumexp_last(log_s + e)
