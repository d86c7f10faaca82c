"""
Synthetic 1-D, 2-D and 3-D TDOA scenarios and the noise-model study inputs.

All randomness is drawn from generators seeded by ``rng_for(seed, stream, ...)``
so that every component (prior, odometry, each pair's TDOA noise, study
perturbations) has its own reproducible stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigInvalid
from .lie import (Pose, retract, retract_arrays, se3_exp, so3_exp, stack_poses,
                  unstack_poses)
from .mixture import SIGMA_FLOOR, Gmm1D
from .scene import (AnchorConstellation, Dataset, OdometryIncrement, Pair, SensorRig,
                    TdoaMeasurement, tdoa_arrays, tdoa_predict)

# stream identifiers for seed splitting
STREAM_PRIOR = 1
STREAM_ODOMETRY = 2
STREAM_TDOA = 3
STREAM_STUDY = 4
STREAM_VB_INIT = 5


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def sub_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit child seed for (seed, keys...)."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


DEFAULT_NOISE = ((0.8, 0.0, 0.05), (0.2, 0.3, 0.15))


@dataclass(frozen=True)
class TrajectorySpec:
    """Ground-truth path generator.

    ``lissajous``: p_k(t) = center_k + amplitude_k sin(2 pi t / period_k + phase_k)
    ``line``: p(t) = center + amplitude * t / T (amplitude is the total travel)
    ``spline``: cubic spline through ``waypoints`` spread evenly over T steps
    """

    kind: str = "lissajous"
    center: Tuple[float, ...] = (5.0,)
    amplitude: Tuple[float, ...] = (3.0,)
    period: Tuple[float, ...] = (100.0,)
    phase: Tuple[float, ...] = (0.0,)
    waypoints: Tuple[Tuple[float, ...], ...] = ()
    yaw_amplitude: float = 0.0
    yaw_period: float = 200.0
    tilt_amplitude: float = 0.0
    tilt_period: float = 150.0


@dataclass(frozen=True)
class ScenarioConfig:
    dimension: int
    T: int
    anchors: Tuple[Tuple[float, ...], ...]
    pairs: Tuple[Pair, ...]
    trajectory: TrajectorySpec
    odometry_std: Tuple[float, ...]
    noise: Tuple[Tuple[float, float, float], ...] = DEFAULT_NOISE
    pair_noise: Tuple[Tuple[Tuple[float, float, float], ...], ...] = ()
    prior_std: Tuple[float, ...] = ()
    lever_arm: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    @property
    def dof(self) -> int:
        return 6 if self.dimension == 3 else self.dimension

    def truth_noise(self) -> Dict[Pair, Gmm1D]:
        out = {}
        for k, pair in enumerate(self.pairs):
            triples = self.pair_noise[k] if k < len(self.pair_noise) else self.noise
            if any(float(sd) < 0 for _, _, sd in triples):
                raise ConfigInvalid(f"noise model for pair {pair}: negative std")
            try:
                out[pair] = Gmm1D.from_triples(
                    [(w, m, max(float(sd), SIGMA_FLOOR)) for w, m, sd in triples])
            except (ValueError, TypeError) as exc:
                raise ConfigInvalid(f"noise model for pair {pair}: {exc}") from None
        return out

    def raw_noise_stds(self, k: int) -> np.ndarray:
        triples = self.pair_noise[k] if k < len(self.pair_noise) else self.noise
        return np.array([float(sd) for _, _, sd in triples])

    def odometry_std_vector(self) -> np.ndarray:
        s = np.asarray(self.odometry_std, dtype=float)
        if s.size == 1:
            s = np.full(self.dof, s[0])
        elif self.dimension == 3 and s.size == 2:
            s = np.repeat(s, 3)
        if s.size != self.dof:
            raise ConfigInvalid(f"odometry_std needs 1 or {self.dof} entries")
        if np.any(s < 0):
            raise ConfigInvalid("odometry_std must be nonnegative")
        return s

    def prior_std_vector(self) -> np.ndarray:
        s = np.asarray(self.prior_std or (0.01,), dtype=float)
        if s.size == 1:
            s = np.full(self.dof, s[0])
        elif self.dimension == 3 and s.size == 2:
            s = np.repeat(s, 3)
        if s.size != self.dof:
            raise ConfigInvalid(f"prior_std needs 1 or {self.dof} entries")
        if np.any(s < 0):
            raise ConfigInvalid("prior_std must be nonnegative")
        return s

    # stored covariances carry the sigma floor; a zero std still draws exactly zero noise
    def odometry_cov(self) -> np.ndarray:
        return np.diag(np.maximum(self.odometry_std_vector(), SIGMA_FLOOR) ** 2)

    def prior_cov(self) -> np.ndarray:
        return np.diag(np.maximum(self.prior_std_vector(), SIGMA_FLOOR) ** 2)


def default_scenario(dimension: int, seed: int = 0, T: Optional[int] = None) -> ScenarioConfig:
    if dimension == 1:
        return ScenarioConfig(
            dimension=1, T=200 if T is None else T,
            anchors=((0.0,), (10.0,)), pairs=((1, 2),),
            trajectory=TrajectorySpec("lissajous", center=(5.0,), amplitude=(3.0,),
                                      period=(80.0,), phase=(0.0,)),
            odometry_std=(0.05,), prior_std=(0.05,), seed=seed)
    if dimension == 2:
        return ScenarioConfig(
            dimension=2, T=200 if T is None else T,
            anchors=((0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)),
            pairs=((1, 2), (3, 4)),
            trajectory=TrajectorySpec("lissajous", center=(5.0, 5.0), amplitude=(3.0, 2.5),
                                      period=(90.0, 60.0), phase=(0.0, np.pi / 2)),
            odometry_std=(0.05,), prior_std=(0.05,), seed=seed)
    if dimension == 3:
        box = [(0.0, 0.0, 0.0), (10.0, 10.0, 4.0), (10.0, 0.0, 0.0), (0.0, 10.0, 4.0),
               (10.0, 10.0, 0.0), (0.0, 0.0, 4.0), (0.0, 10.0, 0.0), (10.0, 0.0, 4.0)]
        return ScenarioConfig(
            dimension=3, T=200 if T is None else T, anchors=tuple(box),
            pairs=((1, 2), (3, 4), (5, 6), (7, 8)),
            trajectory=TrajectorySpec("lissajous", center=(5.0, 5.0, 2.0),
                                      amplitude=(3.0, 2.5, 0.8), period=(90.0, 60.0, 75.0),
                                      phase=(0.0, np.pi / 2, 0.0),
                                      yaw_amplitude=0.6, yaw_period=160.0,
                                      tilt_amplitude=0.05, tilt_period=50.0),
            odometry_std=(0.03, 0.01), prior_std=(0.05, 0.01),
            lever_arm=(0.1, 0.0, 0.05), seed=seed)
    raise ConfigInvalid(f"dimension must be 1, 2 or 3, got {dimension}")


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def _positions(spec: TrajectorySpec, dim: int, T: int) -> np.ndarray:
    steps = np.arange(T + 1, dtype=float)

    def per_axis(v, default):
        v = tuple(v) if len(v) else (default,)
        if len(v) == 1:
            v = v * dim
        if len(v) != dim:
            raise ConfigInvalid(f"trajectory parameter {v} does not match dimension {dim}")
        return np.asarray(v, dtype=float)

    if spec.kind == "lissajous":
        c, a = per_axis(spec.center, 0.0), per_axis(spec.amplitude, 0.0)
        per, ph = per_axis(spec.period, 100.0), per_axis(spec.phase, 0.0)
        if np.any(per <= 0):
            raise ConfigInvalid("lissajous periods must be positive")
        return c + a * np.sin(2 * np.pi * steps[:, None] / per + ph)
    if spec.kind == "line":
        c, a = per_axis(spec.center, 0.0), per_axis(spec.amplitude, 0.0)
        return c + a * (steps[:, None] / max(T, 1))
    if spec.kind == "spline":
        wp = np.asarray(spec.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != dim:
            raise ConfigInvalid("spline trajectory needs >= 2 waypoints of matching dimension")
        knots = np.linspace(0.0, T, wp.shape[0])
        return CubicSpline(knots, wp, axis=0)(steps)
    raise ConfigInvalid(f"unknown trajectory kind {spec.kind!r}")


def _rotations(spec: TrajectorySpec, T: int) -> np.ndarray:
    steps = np.arange(T + 1, dtype=float)
    yaw = spec.yaw_amplitude * np.sin(2 * np.pi * steps / spec.yaw_period)
    roll = spec.tilt_amplitude * np.sin(2 * np.pi * steps / spec.tilt_period)
    pitch = spec.tilt_amplitude * np.cos(2 * np.pi * steps / spec.tilt_period)
    z = np.zeros_like(yaw)
    Rz = so3_exp(np.stack([z, z, yaw], axis=-1))
    Ry = so3_exp(np.stack([z, pitch, z], axis=-1))
    Rx = so3_exp(np.stack([roll, z, z], axis=-1))
    return Rz @ Ry @ Rx


def ground_truth(config: ScenarioConfig, T: Optional[int] = None) -> List[Pose]:
    T = config.T if T is None else T
    pos = _positions(config.trajectory, config.dimension, T)
    if config.dimension == 1:
        a1, a2 = sorted(float(a[0]) for a in config.anchors[:2])
        if np.any(pos[:, 0] <= a1) or np.any(pos[:, 0] >= a2):
            raise ConfigInvalid(f"1-D trajectory leaves the open anchor interval ({a1}, {a2})")
    if config.dimension == 3:
        return unstack_poses(_rotations(config.trajectory, T), pos)
    return unstack_poses(None, pos)


def _anchors(config: ScenarioConfig) -> AnchorConstellation:
    pos = np.asarray(config.anchors, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != config.dimension:
        raise ConfigInvalid("anchor positions do not match the scenario dimension")
    try:
        return AnchorConstellation(pos, config.pairs)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc


def _noise_draw(rng: np.random.Generator, std: np.ndarray, n: int) -> np.ndarray:
    return rng.standard_normal((n, std.size)) * std


def _mixture_draw(gmm: Gmm1D, stds: np.ndarray, seed: int, n: int) -> np.ndarray:
    """Same stream as ``gmm_sample`` but with the unfloored component stds."""
    rng = np.random.default_rng(seed)
    k = rng.choice(gmm.K, size=n, p=gmm.weights)
    return gmm.means[k] + stds[k] * rng.standard_normal(n)


@dataclass
class Simulation:
    dataset: Dataset
    truth: List[Pose]
    theta: Dict[Pair, Gmm1D]


def simulate(config: ScenarioConfig) -> Simulation:
    """Dataset, ground-truth poses and true per-pair noise models."""
    if config.T < 0:
        raise ConfigInvalid("T must be nonnegative")
    anchors = _anchors(config)
    truth = ground_truth(config)
    rig = SensorRig(np.asarray(config.lever_arm if config.dimension == 3 else (0.0, 0.0, 0.0)))
    theta = config.truth_noise()
    Su = config.odometry_cov()
    S0 = config.prior_cov()
    seed = config.seed

    prior_noise = _noise_draw(rng_for(seed, STREAM_PRIOR), config.prior_std_vector(), 1)[0]
    prior = retract(truth[0], prior_noise)

    w = _noise_draw(rng_for(seed, STREAM_ODOMETRY), config.odometry_std_vector(), config.T)
    R, tr = stack_poses(truth)
    if R is None:
        _, rel_t = retract_arrays(None, np.diff(tr, axis=0), w)
        rel_R = None
    else:
        Rt = np.swapaxes(R[:-1], -1, -2)
        rel_R, rel_t = retract_arrays(Rt @ R[1:], (Rt @ (tr[1:] - tr[:-1])[..., None])[..., 0], w)
    odometry = [OdometryIncrement(p, Su) for p in unstack_poses(rel_R, rel_t)]

    tdoa = []
    for k, pair in enumerate(config.pairs):
        i, j = pair
        pred = tdoa_arrays(R, tr, rig.lever_arm, anchors.anchor(i), anchors.anchor(j),
                           jacobian=False)
        eta = _mixture_draw(theta[pair], config.raw_noise_stds(k), sub_seed(seed, STREAM_TDOA, k),
                            max(config.T, 1))
        for t in range(1, config.T + 1):
            tdoa.append(TdoaMeasurement(pair, t, float(pred[t] + eta[t - 1])))
    # stored grouped by pose step then pair, matching arrival order
    tdoa.sort(key=lambda m: (m.pose_index, config.pairs.index(m.pair)))
    ds = Dataset(anchors, rig, odometry, tdoa, prior, S0)
    return Simulation(ds, truth, theta)


# ---------------------------------------------------------------------------
# noise-model study
# ---------------------------------------------------------------------------

TRANSLATION_BOUND = 0.035
ROTATION_BOUND = 0.05


def perturb_for_study(truth: Sequence[Pose], omega: float, delta: float, seed: int,
                      interpretation: str = "variance"):
    """Perturb poses with random diagonal covariances scaled by ``omega``.

    Diagonal entries are drawn from U(0, 0.035 omega) (translation) and
    U(0, 0.05 omega) (rotation). With ``interpretation="variance"`` they are
    the variances; with ``"std"`` they are standard deviations and squared.
    Returns the perturbed poses and the reported covariances ``delta * Sigma``.
    """
    if omega < 0 or delta <= 0:
        raise ValueError("omega must be >= 0 and delta > 0")
    rng = rng_for(seed, STREAM_STUDY)
    R, t = stack_poses(truth)
    n = len(truth)
    rigid = R is not None
    d = 6 if rigid else t.shape[1]
    hi = np.full(d, TRANSLATION_BOUND * omega)
    if rigid:
        hi[3:] = ROTATION_BOUND * omega
    diag = rng.uniform(0.0, 1.0, size=(n, d)) * hi
    if interpretation == "std":
        diag = diag ** 2
    elif interpretation != "variance":
        raise ValueError(f"unknown interpretation {interpretation!r}")
    xi = rng.standard_normal((n, d)) * np.sqrt(diag)
    Rn, tn = retract_arrays(R, t, xi)
    covs = np.zeros((n, d, d))
    idx = np.arange(d)
    covs[:, idx, idx] = delta * diag
    return unstack_poses(Rn, tn), covs


def study_scenario(N: int = 5000, seed: int = 0) -> ScenarioConfig:
    """3-D single-pair scenario used for the noise-model learning study."""
    base = default_scenario(3, seed=seed, T=N)
    return replace(base, pairs=base.pairs[:1])
