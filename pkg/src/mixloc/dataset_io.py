"""
File formats for datasets, trajectories, noise models and experiment results.

Datasets, trajectories and models are line-delimited JSON: a plain-text header
line carrying the schema name, version and units, followed by one object per
line with a ``kind`` field. Floats are written with ``repr`` (shortest
round-tripping decimal), so reading back is bit-exact. Results are flat CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import LengthMismatch, ParseError, SchemaVersionMismatch
from .lie import Pose
from .mixture import Gmm1D
from .scene import (AnchorConstellation, Dataset, OdometryIncrement, Pair, SensorRig,
                    TdoaMeasurement)

DATASET_SCHEMA = "mixloc-dataset"
TRAJECTORY_SCHEMA = "mixloc-trajectory"
MODEL_SCHEMA = "mixloc-model"
SCHEMA_VERSION = 1
UNITS = "units=m,rad,s"

RESULT_COLUMNS = ["scenario", "method", "seed", "rmse_m", "kl_nats_mean", "outer_iters",
                  "term_reason", "wall_s"]
METHOD_LABELS = {"ugmm": "U-GMM", "cgmm": "C-GMM", "gauss": "Gauss"}


# ---------------------------------------------------------------------------
# low-level line handling
# ---------------------------------------------------------------------------

def _header(schema: str) -> str:
    return f"{schema} v{SCHEMA_VERSION} {UNITS}"


def _check_header(line: str, schema: str):
    parts = line.split()
    if len(parts) < 2 or parts[0] != schema:
        raise ParseError(f"expected a '{schema}' header", line=1)
    if parts[1] != f"v{SCHEMA_VERSION}":
        raise SchemaVersionMismatch(
            f"unsupported schema version {parts[1]!r}, expected v{SCHEMA_VERSION}", line=1)


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _records(text: str, schema: str):
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    _check_header(lines[0], schema)
    for n, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record: {exc.msg}", line=n) from None
        if not isinstance(rec, dict) or "kind" not in rec:
            raise ParseError("record must be an object with a 'kind'", line=n, field="kind")
        yield n, rec


def _get(rec, key, n, kind=None):
    if key not in rec:
        raise ParseError("missing field", line=n, field=key)
    value = rec[key]
    try:
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if kind == "float":
            out = float(value)
            if not math.isfinite(out) or isinstance(value, bool):
                raise TypeError
            return out
        if kind == "vec":
            out = np.asarray(value, dtype=float)
            if out.ndim != 1 or not np.all(np.isfinite(out)):
                raise TypeError
            return out
        if kind == "mat":
            out = np.asarray(value, dtype=float)
            if out.ndim != 2 or not np.all(np.isfinite(out)):
                raise TypeError
            return out
    except (TypeError, ValueError):
        raise ParseError(f"invalid value {value!r}", line=n, field=key) from None
    return value


def _pose_obj(pose: Pose) -> dict:
    obj = {"translation": pose.translation.tolist()}
    if pose.is_rigid:
        obj["rotation"] = pose.rotation.tolist()
    return obj


def _pose_from(rec, n) -> Pose:
    t = _get(rec, "translation", n, "vec")
    try:
        if rec.get("rotation") is not None:
            R = _get(rec, "rotation", n, "mat")
            return Pose(t, R)
        return Pose(t)
    except ValueError as exc:
        raise ParseError(str(exc), line=n, field="translation") from None


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write_text(path, lines: Iterable[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def dataset_lines(dataset: Dataset, truth: Optional[Sequence[Pose]] = None) -> List[str]:
    out = [_header(DATASET_SCHEMA)]
    for k, p in enumerate(dataset.anchors.positions, start=1):
        out.append(_dump({"kind": "anchor", "index": k, "position": p.tolist()}))
    for i, j in dataset.anchors.pairs:
        out.append(_dump({"kind": "pair", "i": i, "j": j}))
    out.append(_dump({"kind": "rig", "lever_arm": dataset.rig.lever_arm.tolist()}))
    out.append(_dump({"kind": "prior", **_pose_obj(dataset.prior_pose),
                      "cov": dataset.prior_cov.tolist()}))
    for t, incr in enumerate(dataset.odometry, start=1):
        out.append(_dump({"kind": "odom", "index": t, **_pose_obj(incr.delta),
                          "cov": incr.noise_cov.tolist()}))
    for m in dataset.tdoa:
        out.append(_dump({"kind": "tdoa", "i": m.pair[0], "j": m.pair[1], "t": m.pose_index,
                          "value": m.value}))
    for t, pose in enumerate(truth or []):
        out.append(_dump({"kind": "truth_pose", "index": t, **_pose_obj(pose)}))
    return out


def write_dataset(path, dataset: Dataset, truth: Optional[Sequence[Pose]] = None):
    _write_text(path, dataset_lines(dataset, truth))


def parse_dataset(text: str) -> Tuple[Dataset, Optional[List[Pose]]]:
    anchors: Dict[int, np.ndarray] = {}
    pairs: List[Pair] = []
    lever = None
    prior = None
    odom: Dict[int, OdometryIncrement] = {}
    tdoa: List[TdoaMeasurement] = []
    truth: Dict[int, Pose] = {}
    last = 1
    for n, rec in _records(text, DATASET_SCHEMA):
        last = n
        kind = rec["kind"]
        if kind == "anchor":
            anchors[_get(rec, "index", n, "int")] = _get(rec, "position", n, "vec")
        elif kind == "pair":
            pairs.append((_get(rec, "i", n, "int"), _get(rec, "j", n, "int")))
        elif kind == "rig":
            lever = _get(rec, "lever_arm", n, "vec")
        elif kind == "prior":
            prior = (_pose_from(rec, n), _get(rec, "cov", n, "mat"))
        elif kind == "odom":
            t = _get(rec, "index", n, "int")
            try:
                odom[t] = OdometryIncrement(_pose_from(rec, n), _get(rec, "cov", n, "mat"))
            except ValueError as exc:
                raise ParseError(str(exc), line=n, field="cov") from None
        elif kind == "tdoa":
            tdoa.append(TdoaMeasurement((_get(rec, "i", n, "int"), _get(rec, "j", n, "int")),
                                        _get(rec, "t", n, "int"), _get(rec, "value", n, "float")))
        elif kind == "truth_pose":
            truth[_get(rec, "index", n, "int")] = _pose_from(rec, n)
        else:
            raise ParseError(f"unknown record kind {kind!r}", line=n, field="kind")

    if prior is None:
        raise ParseError("dataset has no prior record", line=last + 1)
    if not anchors or sorted(anchors) != list(range(1, len(anchors) + 1)):
        raise ParseError("anchor indices must be 1..M without gaps", line=last + 1)
    if sorted(odom) != list(range(1, len(odom) + 1)):
        raise ParseError("odometry indices must be 1..T without gaps", line=last + 1)
    try:
        constellation = AnchorConstellation(np.stack([anchors[k] for k in sorted(anchors)]),
                                            tuple(pairs))
        rig = SensorRig(lever if lever is not None else np.zeros(3))
        ds = Dataset(constellation, rig, [odom[t] for t in sorted(odom)], tdoa, prior[0],
                     prior[1])
    except ValueError as exc:
        raise ParseError(str(exc), line=last + 1) from None
    if not truth:
        return ds, None
    if sorted(truth) != list(range(ds.num_poses)):
        raise ParseError("truth poses must cover every step", line=last + 1)
    return ds, [truth[t] for t in range(ds.num_poses)]


def read_dataset(path) -> Tuple[Dataset, Optional[List[Pose]]]:
    return parse_dataset(_read_text(path))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def write_trajectory(path, poses: Sequence[Pose],
                     covariances: Optional[Sequence[np.ndarray]] = None):
    out = [_header(TRAJECTORY_SCHEMA)]
    for t, pose in enumerate(poses):
        obj = {"kind": "pose", "index": t, **_pose_obj(pose)}
        if covariances is not None:
            obj["cov"] = np.asarray(covariances[t]).tolist()
        out.append(_dump(obj))
    _write_text(path, out)


def read_trajectory(path) -> Tuple[List[Pose], Optional[List[np.ndarray]]]:
    poses, covs = {}, {}
    for n, rec in _records(_read_text(path), TRAJECTORY_SCHEMA):
        if rec["kind"] != "pose":
            raise ParseError(f"unknown record kind {rec['kind']!r}", line=n, field="kind")
        t = _get(rec, "index", n, "int")
        poses[t] = _pose_from(rec, n)
        if "cov" in rec:
            covs[t] = _get(rec, "cov", n, "mat")
    order = sorted(poses)
    if order != list(range(len(order))):
        raise ParseError("pose indices must be 0..T without gaps")
    cov_list = [covs[t] for t in order] if len(covs) == len(order) and covs else None
    return [poses[t] for t in order], cov_list


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------

def write_models(path, theta: Dict[Pair, Gmm1D]):
    out = [_header(MODEL_SCHEMA)]
    for pair in sorted(theta):
        g = theta[pair].canonical()
        out.append(_dump({"kind": "model", "i": pair[0], "j": pair[1],
                          "components": [list(c) for c in g.triples()]}))
    _write_text(path, out)


def read_models(path) -> Dict[Pair, Gmm1D]:
    theta = {}
    for n, rec in _records(_read_text(path), MODEL_SCHEMA):
        if rec["kind"] != "model":
            raise ParseError(f"unknown record kind {rec['kind']!r}", line=n, field="kind")
        comps = _get(rec, "components", n)
        try:
            theta[(_get(rec, "i", n, "int"), _get(rec, "j", n, "int"))] = \
                Gmm1D.from_triples([tuple(float(v) for v in c) for c in comps])
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=n, field="components") from None
    return theta


# ---------------------------------------------------------------------------
# metrics and result records
# ---------------------------------------------------------------------------

def rmse(estimate: Sequence[Pose], truth: Sequence[Pose]) -> float:
    """Root-mean-square translation error in meters."""
    if len(estimate) != len(truth):
        raise LengthMismatch(f"estimate has {len(estimate)} poses, truth has {len(truth)}")
    if not estimate:
        raise LengthMismatch("cannot compute RMSE of an empty trajectory")
    a = np.stack([p.translation for p in estimate])
    b = np.stack([p.translation for p in truth])
    if a.shape != b.shape:
        raise LengthMismatch("estimate and truth poses have different dimensions")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def pair_column(pair: Pair) -> str:
    return f"kl_{pair[0]}-{pair[1]}"


@dataclass
class ExperimentRecord:
    scenario: str
    method: str
    seed: int
    rmse_m: float
    kl: Dict[Pair, float] = field(default_factory=dict)
    outer_iters: int = 0
    term_reason: str = ""
    wall_s: float = float("nan")

    def __post_init__(self):
        if not (self.rmse_m >= 0 or math.isnan(self.rmse_m)):
            raise ValueError("RMSE must be nonnegative")
        for v in self.kl.values():
            if v < -1e-6:
                raise ValueError("KL divergence must be nonnegative")

    @property
    def kl_nats_mean(self) -> float:
        return float(np.mean(list(self.kl.values()))) if self.kl else float("nan")

    def row(self) -> Dict[str, str]:
        out = {"scenario": self.scenario, "method": self.method, "seed": str(self.seed),
               "rmse_m": _fmt(self.rmse_m), "kl_nats_mean": _fmt(self.kl_nats_mean),
               "outer_iters": str(self.outer_iters), "term_reason": self.term_reason,
               "wall_s": _fmt(self.wall_s)}
        for pair, v in self.kl.items():
            out[pair_column(pair)] = _fmt(v)
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def sort_key(rec: ExperimentRecord):
    return (rec.scenario, rec.method, rec.seed)


def result_columns(records: Sequence[ExperimentRecord]) -> List[str]:
    pairs = sorted({p for r in records for p in r.kl})
    return RESULT_COLUMNS + [pair_column(p) for p in pairs]


def records_csv(records: Sequence[ExperimentRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=result_columns(records), restval="",
                            lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def write_results(path, records: Sequence[ExperimentRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_csv(records), encoding="utf-8")


def append_results(path, records: Sequence[ExperimentRecord]):
    """Append records; existing columns are kept, the file is rewritten if new ones appear."""
    path = Path(path)
    if not path.exists():
        write_results(path, records)
        return
    existing, _ = read_results(path)
    write_results(path, list(existing) + list(records))


def _parse_pair(col: str) -> Pair:
    i, j = col[3:].split("-")
    return int(i), int(j)


def parse_results(text: str) -> Tuple[List[ExperimentRecord], List[str]]:
    """Records plus warnings for rows that could not be parsed (those are skipped)."""
    reader = csv.DictReader(io.StringIO(text))
    cols = reader.fieldnames or []
    missing = [c for c in RESULT_COLUMNS if c not in cols]
    if missing:
        raise ParseError(f"results header lacks columns {missing}", line=1)
    kl_cols = [c for c in cols if c.startswith("kl_") and c != "kl_nats_mean"]
    records, warnings = [], []
    for row in reader:
        n = reader.line_num
        try:
            if None in row or any(row[c] is None for c in RESULT_COLUMNS):
                raise ValueError("wrong number of fields")
            kl = {_parse_pair(c): float(row[c]) for c in kl_cols if row.get(c)}
            records.append(ExperimentRecord(row["scenario"], row["method"], int(row["seed"]),
                                            float(row["rmse_m"]), kl, int(row["outer_iters"]),
                                            row["term_reason"], float(row["wall_s"])))
        except (ValueError, TypeError) as exc:
            warnings.append(f"line {n}: skipped ({exc})")
    return records, warnings


def read_results(path) -> Tuple[List[ExperimentRecord], List[str]]:
    return parse_results(_read_text(path))


def default_output_dir() -> Path:
    return Path(os.environ.get("MIXLOC_OUTPUT_DIR", "mixloc-out"))
