"""
Variational Bayes learning of a scalar GMM from residuals with known
per-sample uncertainty.

Each observed residual r_n is treated as a noisy draw N(r_n | eta_n, phi_n) of a
latent noise value eta_n that follows the mixture. With phi_n = 0 everywhere
the updates reduce exactly to the standard VB-GMM (Bishop, ch. 10.2) with a
Dirichlet prior on the weights and a Gaussian-Gamma (1-D Wishart) prior on
each component's mean and precision.

The scalar Wishart W(lambda | w, nu) is the Gamma distribution with shape nu/2
and rate 1/(2w), so E[lambda] = nu w and E[ln lambda] = digamma(nu/2) + ln(2w).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln

from .errors import TooFewSamples
from .mixture import SIGMA_FLOOR, Gmm1D

LOG_2PI = np.log(2.0 * np.pi)
EMPTY_COMPONENT = 1e-12


@dataclass(frozen=True)
class ResidualSample:
    r: float
    phi: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.r) and np.isfinite(self.phi)) or self.phi < 0:
            raise ValueError("residual sample needs finite r and phi >= 0")


def as_arrays(samples) -> Tuple[np.ndarray, np.ndarray]:
    """(r, phi) arrays from a list of ResidualSample or an (r, phi) tuple."""
    if isinstance(samples, tuple) and len(samples) == 2:
        r, phi = samples
    else:
        r = [s.r for s in samples]
        phi = [s.phi for s in samples]
    r = np.asarray(r, dtype=float).reshape(-1)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), r.shape).copy()
    if np.any(phi < 0) or not np.all(np.isfinite(phi)) or not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite and phi >= 0")
    return r, phi


@dataclass(frozen=True)
class VbPriors:
    """Hyperparameters; ``w0=None`` means 1 / (nu0 var(r)) from the data."""

    alpha0: float = 1.0
    beta0: float = 1.0
    m0: float = 0.0
    w0: Optional[float] = None
    nu0: float = 2.0

    def resolve(self, r: np.ndarray) -> "VbPriors":
        if self.w0 is not None:
            return self
        var = max(float(np.var(r)), SIGMA_FLOOR ** 2)
        return replace(self, w0=1.0 / (self.nu0 * var))

    def __post_init__(self):
        for name in ("alpha0", "beta0", "nu0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.w0 is not None and self.w0 <= 0:
            raise ValueError("w0 must be positive")


@dataclass
class VbPosterior:
    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    w: np.ndarray
    nu: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    psi: np.ndarray
    # (r - tau)^2 / phi and psi / phi, both finite in the phi -> 0 limit
    fit_sq: np.ndarray
    shrink: np.ndarray
    Nk: np.ndarray
    tau_bar: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    elbo_trace: List[float] = field(default_factory=list)
    sweeps: int = 0

    @property
    def K(self) -> int:
        return self.alpha.size

    def expected_precision(self) -> np.ndarray:
        return self.nu * self.w

    def expected_log_precision(self) -> np.ndarray:
        return digamma(0.5 * self.nu) + np.log(2.0 * self.w)

    def expected_log_weights(self) -> np.ndarray:
        return digamma(self.alpha) - digamma(self.alpha.sum())

    def mixture(self) -> Gmm1D:
        """Point estimate: E[pi], E[mu] and 1/sqrt(E[lambda]), ascending mean."""
        pi = self.alpha / self.alpha.sum()
        sd = np.maximum(1.0 / np.sqrt(self.expected_precision()), SIGMA_FLOOR)
        return Gmm1D(pi, self.m, sd).canonical()


def latent_residual_posterior(sample: ResidualSample, component: Tuple[float, float, float]):
    """Mean and variance of q(eta | z = k) for one sample and component (m, w, nu)."""
    m, w, nu = component
    if w <= 0 or nu <= 0:
        raise ValueError("w and nu must be positive")
    a = sample.phi * nu * w
    psi = sample.phi / (1.0 + a)
    tau = (sample.r + a * m) / (1.0 + a)
    return tau, psi


def _latent(r, phi, m, w, nu):
    """Vectorized latent posterior plus the limit-safe helper ratios."""
    lam = nu * w
    a = phi[:, None] * lam
    shrink = 1.0 / (1.0 + a)
    diff = r[:, None] - m
    tau = (r[:, None] + a * m) * shrink
    psi = phi[:, None] * shrink
    fit_sq = a * lam * diff * diff * shrink * shrink
    return tau, psi, fit_sq, shrink


def _data_terms(post: VbPosterior) -> np.ndarray:
    """E[ln N(r|eta,phi)] - E[ln N(eta|tau,psi)] per (n, k), limit-safe."""
    return -0.5 * np.log(1.0 / post.shrink) - 0.5 * post.fit_sq - 0.5 * post.shrink + 0.5


def _component_terms(post: VbPosterior) -> np.ndarray:
    """E[ln N(eta | mu_k, 1/lambda_k)] + E[ln pi_k] per (n, k)."""
    lam = post.expected_precision()
    quad = lam * ((post.tau - post.m) ** 2 + post.psi) + 1.0 / post.beta
    return (0.5 * post.expected_log_precision() - 0.5 * LOG_2PI - 0.5 * quad
            + post.expected_log_weights())


def _row_logsumexp(x: np.ndarray) -> np.ndarray:
    top = x.max(axis=1, keepdims=True)
    return top + np.log(np.exp(x - top).sum(axis=1, keepdims=True))


def e_step(r: np.ndarray, phi: np.ndarray, post: VbPosterior) -> np.ndarray:
    """Refresh q(eta | z) from the current Gaussian-Gamma factors, then return gamma."""
    post.tau, post.psi, post.fit_sq, post.shrink = _latent(r, phi, post.m, post.w, post.nu)
    log_rho = _data_terms(post) + _component_terms(post)
    post.gamma = np.exp(log_rho - _row_logsumexp(log_rho))
    return post.gamma


def m_step(gamma: np.ndarray, tau: np.ndarray, psi: np.ndarray, priors: VbPriors):
    """Conjugate updates; returns (alpha, beta, m, w, nu, tau_bar, S, Nk)."""
    a0, b0, m0, w0, nu0 = priors.alpha0, priors.beta0, priors.m0, priors.w0, priors.nu0
    Nk = gamma.sum(axis=0)
    empty = Nk < EMPTY_COMPONENT
    safe = np.where(empty, 1.0, Nk)
    tau_bar = np.where(empty, m0, (gamma * tau).sum(axis=0) / safe)
    S = np.where(empty, 0.0,
                 ((gamma * (tau - tau_bar) ** 2).sum(axis=0) + (gamma * psi).sum(axis=0)) / safe)
    alpha = a0 + Nk
    beta = b0 + Nk
    m = (b0 * m0 + Nk * tau_bar) / beta
    nu = nu0 + Nk
    w_inv = 1.0 / w0 + Nk * S + b0 * Nk / (b0 + Nk) * (tau_bar - m0) ** 2
    # an empty component keeps the prior exactly (no round trip through 1/w0)
    alpha = np.where(empty, a0, alpha)
    beta = np.where(empty, b0, beta)
    m = np.where(empty, m0, m)
    nu = np.where(empty, nu0, nu)
    w = np.where(empty, w0, 1.0 / w_inv)
    return alpha, beta, m, w, nu, tau_bar, S, Nk


def _log_wishart_norm(w, nu):
    return -0.5 * nu * np.log(w) - 0.5 * nu * np.log(2.0) - gammaln(0.5 * nu)


def elbo(post: VbPosterior, priors: VbPriors) -> float:
    """Evidence lower bound for the current (gamma, tau, psi) and parameter factors."""
    K = post.K
    g = post.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        glng = np.where(g > 0, g * np.log(g), 0.0)

    Elnpi = post.expected_log_weights()
    Elnl = post.expected_log_precision()
    lam = post.expected_precision()
    # sum_n gamma_nk ((tau_nk - m_k)^2 + psi_nk) = N_k (S_k + (tau_bar_k - m_k)^2)
    spread = post.Nk * (post.S + (post.tau_bar - post.m) ** 2)
    comp = (post.Nk * (0.5 * Elnl - 0.5 * LOG_2PI - 0.5 / post.beta + Elnpi)
            - 0.5 * lam * spread)
    sample_part = float(np.sum(g * _data_terms(post)) + comp.sum() - glng.sum())
    a0, b0, m0, w0, nu0 = priors.alpha0, priors.beta0, priors.m0, priors.w0, priors.nu0

    ln_c0 = gammaln(K * a0) - K * gammaln(a0)
    ln_c = gammaln(post.alpha.sum()) - gammaln(post.alpha).sum()
    p_pi = ln_c0 + (a0 - 1.0) * Elnpi.sum()
    q_pi = ln_c + ((post.alpha - 1.0) * Elnpi).sum()

    p_ml = (0.5 * (np.log(b0 / (2 * np.pi)) + Elnl - b0 / post.beta
                   - b0 * lam * (post.m - m0) ** 2)
            + _log_wishart_norm(w0, nu0) + 0.5 * (nu0 - 2.0) * Elnl
            - 0.5 * post.nu * post.w / w0).sum()
    H_lam = -_log_wishart_norm(post.w, post.nu) - 0.5 * (post.nu - 2.0) * Elnl + 0.5 * post.nu
    q_ml = (0.5 * Elnl + 0.5 * np.log(post.beta / (2 * np.pi)) - 0.5 - H_lam).sum()
    return sample_part + p_pi - q_pi + p_ml - q_ml


def kmeans_responsibilities(r: np.ndarray, K: int, seed: int) -> np.ndarray:
    """Hard one-hot responsibilities from k-means++ seeded Lloyd iterations."""
    if K == 1:
        return np.ones((r.size, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(r.reshape(-1, 1), K, minit="++", seed=np.random.default_rng(seed))
    gamma = np.zeros((r.size, K))
    gamma[np.arange(r.size), labels] = 1.0
    return gamma


def _init_posterior(r, phi, K, priors, seed) -> VbPosterior:
    gamma = kmeans_responsibilities(r, K, seed)
    tau = np.repeat(r[:, None], K, axis=1)
    psi = np.zeros_like(tau)
    alpha, beta, m, w, nu, tau_bar, S, Nk = m_step(gamma, tau, psi, priors)
    ones = np.ones_like(tau)
    return VbPosterior(alpha, beta, m, w, nu, gamma, tau, psi, np.zeros_like(tau), ones, Nk,
                       tau_bar, S)


def vb_sweep(r, phi, post: VbPosterior, priors: VbPriors) -> float:
    """One E step followed by one M step; returns the ELBO afterwards."""
    e_step(r, phi, post)
    (post.alpha, post.beta, post.m, post.w, post.nu,
     post.tau_bar, post.S, post.Nk) = m_step(post.gamma, post.tau, post.psi, priors)
    value = elbo(post, priors)
    post.elbo_trace.append(value)
    post.sweeps += 1
    return value


def fit_ugmm(samples, K: int = 3, priors: VbPriors = VbPriors(), seed: int = 0,
             max_sweeps: int = 200, tol: float = 1e-6) -> Tuple[VbPosterior, Gmm1D]:
    """Uncertainty-aware VB-GMM fit.

    ``samples`` is a list of ResidualSample or an ``(r, phi)`` tuple of arrays.
    Iterates until the relative ELBO change drops below ``tol``.
    """
    r, phi = as_arrays(samples)
    if K < 1:
        raise ValueError("K must be >= 1")
    if r.size < K:
        raise TooFewSamples(f"need at least {K} residuals, got {r.size}")
    priors = priors.resolve(r)
    post = _init_posterior(r, phi, K, priors, seed)
    prev = None
    for _ in range(max_sweeps):
        value = vb_sweep(r, phi, post, priors)
        if prev is not None and abs(value - prev) <= tol * abs(prev):
            break
        prev = value
    return post, post.mixture()


def fit_cgmm(residuals, K: int = 3, priors: VbPriors = VbPriors(), seed: int = 0,
             max_sweeps: int = 200, tol: float = 1e-6) -> Tuple[VbPosterior, Gmm1D]:
    """Conventional VB-GMM on raw residuals (every phi_n = 0)."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    return fit_ugmm((r, np.zeros_like(r)), K, priors, seed, max_sweeps, tol)
