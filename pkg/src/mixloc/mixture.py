"""Scalar Gaussian mixtures: density, sampling, Gaussian fit and KL divergence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.special import ndtr

from .errors import TooFewSamples

SIGMA_FLOOR = 1e-6
DENSITY_FLOOR = 1e-300


def logsumexp_last(x) -> np.ndarray:
    """log(sum(exp(x))) over the last axis, shifted by the maximum for stability."""
    x = np.asarray(x, dtype=float)
    top = np.max(x, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - top), axis=-1)) + top[..., 0]


@dataclass(frozen=True, eq=False)
class Gmm1D:
    """Scalar mixture with weights, means and standard deviations."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = np.array(self.means, dtype=float).reshape(-1)
        s = np.array(self.stds, dtype=float).reshape(-1)
        if not (w.shape == m.shape == s.shape) or w.size == 0:
            raise ValueError("weights, means and stds must have the same nonzero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to one")
        if np.any(s <= 1e-9) or not np.all(np.isfinite(m)):
            raise ValueError("component stds must exceed 1e-9 and means be finite")
        for a in (w, m, s):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "Gmm1D":
        return cls([1.0], [mean], [std])

    @classmethod
    def from_triples(cls, triples: Iterable[Tuple[float, float, float]]) -> "Gmm1D":
        w, m, s = zip(*triples)
        return cls(w, m, s)

    @property
    def K(self) -> int:
        return self.weights.size

    def triples(self) -> List[Tuple[float, float, float]]:
        return [(float(w), float(m), float(s))
                for w, m, s in zip(self.weights, self.means, self.stds)]

    def canonical(self) -> "Gmm1D":
        """Components sorted by ascending mean (stable)."""
        order = np.argsort(self.means, kind="stable")
        return Gmm1D(self.weights[order], self.means[order], self.stds[order])

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.stds ** 2 + (self.means - m) ** 2))

    def logpdf(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        z = (r[..., None] - self.means) / self.stds
        comp = np.log(self.weights) - np.log(self.stds) - 0.5 * np.log(2 * np.pi) - 0.5 * z * z
        return logsumexp_last(comp)

    def pdf(self, r) -> np.ndarray:
        return np.exp(self.logpdf(r))

    def cdf(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return ndtr((r[..., None] - self.means) / self.stds) @ self.weights

    def __repr__(self):
        body = ", ".join(f"({w:.4g}, {m:.4g}, {s:.4g})" for w, m, s in self.triples())
        return f"Gmm1D[{body}]"


def gmm_pdf(gmm: Gmm1D, r):
    out = gmm.pdf(r)
    return float(out) if np.ndim(out) == 0 else out


def gmm_sample(gmm: Gmm1D, seed: int, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    k = rng.choice(gmm.K, size=n, p=gmm.weights)
    return gmm.means[k] + gmm.stds[k] * rng.standard_normal(n)


def fit_gauss(residuals: Sequence[float]) -> Gmm1D:
    """Single-Gaussian noise model: sample mean and (biased) sample std."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.size < 2:
        raise TooFewSamples(f"need at least 2 residuals, got {r.size}")
    mu = r.mean()
    sd = max(float(np.sqrt(np.mean((r - mu) ** 2))), SIGMA_FLOOR)
    return Gmm1D.gaussian(float(mu), sd)


@dataclass(frozen=True)
class QuadratureConfig:
    span_sigmas: float = 10.0
    points: int = 4001

    def __post_init__(self):
        if self.points < 3 or self.points % 2 == 0:
            raise ValueError("quadrature points must be odd and >= 3")
        if self.span_sigmas <= 0:
            raise ValueError("span_sigmas must be positive")


def kl_grid(p: Gmm1D, q: Gmm1D, quad: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Global grid over every component's span, refined around each component."""
    means = np.concatenate([p.means, q.means])
    stds = np.concatenate([p.stds, q.stds])
    lo = (means - quad.span_sigmas * stds).min()
    hi = (means + quad.span_sigmas * stds).max()
    parts = [np.linspace(lo, hi, quad.points)]
    for m, s in zip(means, stds):
        parts.append(np.linspace(m - quad.span_sigmas * s, m + quad.span_sigmas * s, quad.points))
    return np.unique(np.concatenate(parts))


def gmm_kl(p: Gmm1D, q: Gmm1D, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """KL(p || q) in nats by composite Simpson quadrature."""
    x = kl_grid(p, q, quad)
    lp = np.maximum(p.logpdf(x), np.log(DENSITY_FLOOR))
    lq = np.maximum(q.logpdf(x), np.log(DENSITY_FLOOR))
    return float(simpson(np.exp(lp) * (lp - lq), x=x))


def kl_divergence(truth: Gmm1D, estimate: Gmm1D, direction: str = "truth_estimate",
                  quad: QuadratureConfig = QuadratureConfig()) -> float:
    """KL between a reference and an estimated model in the configured direction."""
    if direction == "truth_estimate":
        return gmm_kl(truth, estimate, quad)
    if direction == "estimate_truth":
        return gmm_kl(estimate, truth, quad)
    raise ValueError(f"unknown KL direction {direction!r}")
