"""
INI configuration files mapped 1:1 onto the configuration dataclasses.

Empty values mean "use the built-in default" (for scenario fields, the
per-dimension default scenario). Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Dict, Optional, Tuple

from .bilevel import BilevelConfig
from .errors import ConfigInvalid
from .experiments import COMPARE_OUTER_ITERATIONS, CompareConfig, StudyConfig
from .mixture import QuadratureConfig
from .msm import MsmConfig
from .simulator import ScenarioConfig, TrajectorySpec, default_scenario
from .solver import SolverConfig
from .vbgmm import VbPriors

SCENARIO_KEYS = ("dimension", "T", "seed", "anchors", "pairs", "odometry_std", "prior_std",
                 "noise", "lever_arm", "trajectory_kind", "trajectory_center",
                 "trajectory_amplitude", "trajectory_period", "trajectory_phase",
                 "trajectory_waypoints", "yaw_amplitude", "yaw_period", "tilt_amplitude",
                 "tilt_period")


@dataclass(frozen=True)
class AppConfig:
    scenario: Dict[str, str] = field(default_factory=dict)
    bilevel: BilevelConfig = field(default_factory=BilevelConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)


# ---------------------------------------------------------------------------
# value parsing
# ---------------------------------------------------------------------------

def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _rows(text: str) -> Tuple[Tuple[float, ...], ...]:
    return tuple(_floats(row) for row in text.split(";") if row.strip())


def _pairs(text: str) -> Tuple[Tuple[int, int], ...]:
    out = []
    for item in text.replace(",", " ").split():
        i, j = item.split("-")
        out.append((int(i), int(j)))
    return tuple(out)


def _ints(text: str) -> Tuple[int, ...]:
    """Comma/space separated integers; ``a-b`` expands to the inclusive range."""
    out = []
    for item in text.replace(",", " ").split():
        if "-" in item[1:]:
            lo, hi = item.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(item))
    return tuple(out)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(dc_type, section: str, items: Dict[str, str], defaults):
    """Build a dataclass from string items, starting from ``defaults``."""
    known = {f.name: f for f in fields(dc_type)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known or is_dataclass(getattr(defaults, key)):
            raise ConfigInvalid(f"unknown key {key!r} in [{section}]")
        raw = raw.strip()
        default = getattr(defaults, key)
        try:
            if raw == "":
                value = None if key == "w0" else default
            elif isinstance(default, bool):
                value = _bool(raw)
            elif isinstance(default, int) or key in ("T",):
                value = int(raw)
            elif isinstance(default, float) or key == "w0":
                value = float(raw)
            elif isinstance(default, tuple):
                value = _ints(raw) if key in ("seeds", "dimensions") else \
                    tuple(raw.replace(",", " ").split()) if key == "methods" else _floats(raw)
            else:
                value = raw
        except ValueError as exc:
            raise ConfigInvalid(f"[{section}] {key}: {exc}") from None
        kwargs[key] = value
    try:
        return replace(defaults, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(f"[{section}]: {exc}") from None


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

SECTIONS = ("scenario", "bilevel", "msm", "solver", "vb", "study", "compare", "kl")


def parse_config(text: str) -> AppConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"malformed config: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigInvalid(f"unknown config sections {unknown}")
    sec = lambda name: dict(parser[name]) if parser.has_section(name) else {}

    scenario = sec("scenario")
    bad = [k for k in scenario if k not in SCENARIO_KEYS]
    if bad:
        raise ConfigInvalid(f"unknown keys {bad} in [scenario]")
    msm = _coerce(MsmConfig, "msm", sec("msm"), MsmConfig())
    solver = _coerce(SolverConfig, "solver", sec("solver"), SolverConfig())
    priors = _coerce(VbPriors, "vb", sec("vb"), VbPriors())
    kl = sec("kl")
    direction = kl.pop("direction", "truth_estimate").strip() or "truth_estimate"
    if direction not in ("truth_estimate", "estimate_truth"):
        raise ConfigInvalid(f"[kl] direction must be truth_estimate or estimate_truth")
    quad = _coerce(QuadratureConfig, "kl", kl, QuadratureConfig())

    bl_items = sec("bilevel")
    bilevel = _coerce(BilevelConfig, "bilevel", bl_items,
                      BilevelConfig(msm=msm, solver=solver, priors=priors))
    study = _coerce(StudyConfig, "study", sec("study"),
                    StudyConfig(priors=priors, K=bilevel.K, kl_direction=direction,
                                quadrature=quad))
    compare_items = sec("compare")
    outer = compare_items.pop("max_outer_iterations", "").strip()
    compare_bilevel = replace(bilevel, max_outer_iterations=int(outer) if outer
                              else COMPARE_OUTER_ITERATIONS)
    compare = _coerce(CompareConfig, "compare", compare_items,
                      CompareConfig(bilevel=compare_bilevel, kl_direction=direction,
                                    quadrature=quad))
    return AppConfig(scenario, bilevel, study, compare, quad)


def load_config(path: Optional[str]) -> AppConfig:
    if path is None:
        return AppConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None


def scenario_from(items: Dict[str, str], dimension: Optional[int] = None,
                  seed: Optional[int] = None) -> ScenarioConfig:
    """Default scenario for the dimension with any [scenario] overrides applied."""
    try:
        dim = dimension if dimension is not None else int(items.get("dimension") or 2)
        base_seed = seed if seed is not None else int(items.get("seed") or 0)
        T = items.get("T", "").strip()
        sc = default_scenario(dim, base_seed, int(T) if T else None)
        upd = {}
        get = lambda k: items.get(k, "").strip()
        if get("anchors"):
            upd["anchors"] = _rows(get("anchors"))
        if get("pairs"):
            upd["pairs"] = _pairs(get("pairs"))
        if get("odometry_std"):
            upd["odometry_std"] = _floats(get("odometry_std"))
        if get("prior_std"):
            upd["prior_std"] = _floats(get("prior_std"))
        if get("noise"):
            upd["noise"] = _rows(get("noise"))
        if get("lever_arm"):
            upd["lever_arm"] = _floats(get("lever_arm"))
        traj = {}
        for key in ("center", "amplitude", "period", "phase"):
            if get(f"trajectory_{key}"):
                traj[key] = _floats(get(f"trajectory_{key}"))
        if get("trajectory_kind"):
            traj["kind"] = get("trajectory_kind")
        if get("trajectory_waypoints"):
            traj["waypoints"] = _rows(get("trajectory_waypoints"))
        for key in ("yaw_amplitude", "yaw_period", "tilt_amplitude", "tilt_period"):
            if get(key):
                traj[key] = float(get(key))
        if traj:
            upd["trajectory"] = replace(sc.trajectory, **traj)
        return replace(sc, **upd)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(f"[scenario]: {exc}") from None


# ---------------------------------------------------------------------------
# default-config output
# ---------------------------------------------------------------------------

def _section(name: str, obj, skip=()) -> str:
    lines = [f"[{name}]"]
    for f in fields(obj):
        if f.name in skip:
            continue
        lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines)


def _scenario_section(dim: int) -> str:
    sc = default_scenario(dim)
    tr = sc.trajectory
    rows = lambda v: "; ".join(_fmt(tuple(r)) for r in v)
    values = [
        ("dimension", dim), ("T", sc.T), ("seed", sc.seed),
        ("anchors", rows(sc.anchors)),
        ("pairs", " ".join(f"{i}-{j}" for i, j in sc.pairs)),
        ("odometry_std", _fmt(sc.odometry_std)), ("prior_std", _fmt(sc.prior_std)),
        ("noise", rows(sc.noise)), ("lever_arm", _fmt(sc.lever_arm)),
        ("trajectory_kind", tr.kind), ("trajectory_center", _fmt(tr.center)),
        ("trajectory_amplitude", _fmt(tr.amplitude)), ("trajectory_period", _fmt(tr.period)),
        ("trajectory_phase", _fmt(tr.phase)),
        ("trajectory_waypoints", rows(tr.waypoints)),
        ("yaw_amplitude", _fmt(tr.yaw_amplitude)), ("yaw_period", _fmt(tr.yaw_period)),
        ("tilt_amplitude", _fmt(tr.tilt_amplitude)), ("tilt_period", _fmt(tr.tilt_period)),
    ]
    return "[scenario]\n" + "\n".join(f"{k} = {v}" for k, v in values)


def default_config_text(dimension: int = 2) -> str:
    """Every default as an editable INI file (scenario block for ``dimension``)."""
    cfg = AppConfig()
    parts = [
        "# mixloc configuration; empty values fall back to built-in defaults",
        f"# scenario defaults shown for the {dimension}-D case",
        _scenario_section(dimension),
        _section("bilevel", cfg.bilevel, skip=("msm", "solver", "priors")),
        _section("msm", cfg.bilevel.msm),
        _section("solver", cfg.bilevel.solver),
        _section("vb", cfg.bilevel.priors),
        _section("study", cfg.study, skip=("priors", "K", "kl_direction", "quadrature")),
        _section("compare", cfg.compare, skip=("bilevel", "kl_direction", "quadrature"))
        + f"\nmax_outer_iterations = {cfg.compare.bilevel.max_outer_iterations}",
        "[kl]\ndirection = truth_estimate\n"
        + "\n".join(f"{f.name} = {_fmt(getattr(cfg.quadrature, f.name))}"
                    for f in fields(cfg.quadrature)),
    ]
    return "\n\n".join(parts) + "\n"
