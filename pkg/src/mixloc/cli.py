"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import dataset_io as dio
from .bilevel import METHODS, run_bilevel
from .config import _floats, _ints, default_config_text, load_config, scenario_from
from .errors import ConfigInvalid, LengthMismatch, MixlocError, ParseError
from .experiments import aggregate, run_compare, run_study, scenario_name, summarize_study
from .mixture import kl_divergence
from .simulator import simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("mixloc")

DATASET_FILE = "dataset.jsonl"
TRUTH_MODELS_FILE = "truth_models.jsonl"
RESULTS_FILE = "results.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else dio.default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sc = scenario_from(cfg.scenario, args.dim, args.seed)
    sim = simulate(sc)
    out = _out_dir(args)
    dio.write_dataset(out / DATASET_FILE, sim.dataset, sim.truth)
    dio.write_models(out / TRUTH_MODELS_FILE, sim.theta)
    ds = sim.dataset
    print(f"simulated {sc.dimension}-D scenario: T={len(ds.odometry)} "
          f"pairs={len(ds.anchors.pairs)} N={len(ds.tdoa)} -> {out / DATASET_FILE}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    dataset, truth = dio.read_dataset(args.dataset)
    truth_models_path = Path(args.truth_models) if args.truth_models else \
        Path(args.dataset).with_name(TRUTH_MODELS_FILE)
    truth_models = dio.read_models(truth_models_path) if truth_models_path.exists() else {}
    bl = cfg.bilevel
    if args.force_phi_zero:
        bl = replace(bl, force_phi_zero=True)
    if args.max_outer is not None:
        bl = replace(bl, max_outer_iterations=args.max_outer)
    seed = args.seed if args.seed is not None else 0

    start = time.perf_counter()
    result = run_bilevel(dataset, bl, seed, args.method)
    wall = time.perf_counter() - start

    out = _out_dir(args)
    est = result.trajectory
    dio.write_trajectory(out / "trajectory.jsonl", est.poses, est.covariances)
    dio.write_models(out / "models.jsonl", result.theta)
    err = dio.rmse(est.poses, truth) if truth is not None else float("nan")
    kl = {p: kl_divergence(truth_models[p], g, cfg.compare.kl_direction, cfg.quadrature)
          for p, g in sorted(result.theta.items()) if p in truth_models}
    reason = "error" if result.termination == "Error" else result.termination
    record = dio.ExperimentRecord(scenario_name(dataset.anchors.dim), dio.METHOD_LABELS[args.method],
                                  seed, err, kl, result.outer_iterations, reason,
                                  wall if args.record_wall_time else float("nan"))
    dio.write_results(out / RESULTS_FILE, [record])
    print(f"{record.method}: rmse_m={err:.6g} kl_nats_mean={record.kl_nats_mean:.6g} "
          f"outer_iters={record.outer_iters} term={record.term_reason}")
    if result.termination == "Error":
        print(f"error after {result.outer_iterations} iterations: {result.error}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _summary_rows(records):
    rows = []
    for (scenario, method), s in aggregate(records).items():
        rows.append([scenario, method, s["n"], s["failed"], repr(s["rmse_mean"]),
                     repr(s["rmse_median"]), repr(s["rmse_q25"]), repr(s["rmse_q75"]),
                     repr(s["kl_mean"])])
    return rows


SUMMARY_HEADER = ["scenario", "method", "n", "failed", "rmse_mean", "rmse_median", "rmse_q25",
                  "rmse_q75", "kl_mean"]


def _print_summary(rows):
    print(f"{'scenario':<9}{'method':<8}{'n':>4}{'rmse_mean':>12}{'kl_mean':>12}")
    for r in rows:
        print(f"{r[0]:<9}{r[1]:<8}{r[2]:>4}{float(r[4]):>12.5f}{float(r[8]):>12.5f}")


def cmd_compare(args) -> int:
    cfg = load_config(args.config).compare
    upd = {}
    if args.seeds:
        upd["seeds"] = _ints(args.seeds)
    elif args.seed is not None:
        upd["seeds"] = (args.seed,)
    if args.dims:
        upd["dimensions"] = _ints(args.dims)
    if args.T is not None:
        upd["T"] = args.T
    if args.max_outer is not None:
        upd["bilevel"] = replace(cfg.bilevel, max_outer_iterations=args.max_outer)
    try:
        cfg = replace(cfg, **upd)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None
    if any(d not in (1, 2, 3) for d in cfg.dimensions):
        raise ConfigInvalid("dimensions must be drawn from 1, 2, 3")

    records = run_compare(cfg, jobs=args.jobs)
    out = _out_dir(args)
    timings = [[r.scenario, r.method, r.seed, repr(r.wall_s)] for r in records]
    if not args.record_wall_time:
        records = [replace(r, wall_s=float("nan")) for r in records]
    dio.write_results(out / RESULTS_FILE, records)
    _write_csv(out / "timings.csv", ["scenario", "method", "seed", "wall_s"], timings)
    rows = _summary_rows(records)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)
    _print_summary(rows)
    return EXIT_OK


STUDY_HEADER = ["seed", "omega", "delta", "kl_ugmm", "kl_cgmm", "improvement"]


def cmd_study_noise(args) -> int:
    cfg = load_config(args.config).study
    upd = {}
    if args.seeds:
        upd["seeds"] = _ints(args.seeds)
    if args.omegas:
        upd["omegas"] = _floats(args.omegas)
    if args.deltas:
        upd["deltas"] = _floats(args.deltas)
    if args.N is not None:
        upd["N"] = args.N
    try:
        cfg = replace(cfg, **upd)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None

    rows = run_study(cfg, jobs=args.jobs)
    out = _out_dir(args)
    _write_csv(out / "study.csv", STUDY_HEADER,
               [[r.seed, repr(r.omega), repr(r.delta), repr(r.kl_ugmm), repr(r.kl_cgmm),
                 repr(r.improvement)] for r in rows])
    summary = summarize_study(rows)
    _write_csv(out / "study_summary.csv",
               ["omega", "delta", "n", "kl_ugmm_mean", "kl_cgmm_mean", "improvement_mean"],
               [[repr(w), repr(d), s["n"], repr(s["kl_ugmm"]), repr(s["kl_cgmm"]),
                 repr(s["improvement"])] for (w, d), s in summary.items()])
    print(f"{'omega':>6}{'delta':>7}{'KL U-GMM':>11}{'KL C-GMM':>11}{'improve':>10}")
    for (w, d), s in summary.items():
        print(f"{w:>6.1f}{d:>7.2f}{s['kl_ugmm']:>11.4f}{s['kl_cgmm']:>11.4f}"
              f"{s['improvement']:>10.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.results)
    files = sorted(root.rglob("*.csv")) if root.is_dir() else []
    records = []
    for path in files:
        text = path.read_text(encoding="utf-8")
        if not text.startswith(",".join(dio.RESULT_COLUMNS)):
            continue
        recs, warnings = dio.parse_results(text)
        for w in warnings:
            print(f"warning: {path}: {w}", file=sys.stderr)
        records.extend(recs)
    if not records:
        print(f"no result records found under {root}", file=sys.stderr)
        return EXIT_CONFIG
    records.sort(key=dio.sort_key)
    out = Path(args.out) if args.out else root
    out.mkdir(parents=True, exist_ok=True)
    dio.write_results(out / "report_records.csv", records)
    rows = _summary_rows(records)
    _write_csv(out / "report_summary.csv", SUMMARY_HEADER, rows)
    _print_summary(rows)
    return EXIT_OK


def cmd_default_config(args) -> int:
    sys.stdout.write(default_config_text(args.dim))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixloc", description="TDOA localization with learned mixture noise models")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="INI configuration file")
        if out:
            sp.add_argument("--out", help="output directory (default: $MIXLOC_OUTPUT_DIR "
                                          "or ./mixloc-out)")

    s = sub.add_parser("simulate", help="generate a simulated dataset")
    common(s)
    s.add_argument("--dim", type=int, choices=(1, 2, 3))
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="estimate a trajectory and noise models for a dataset")
    common(s)
    s.add_argument("dataset")
    s.add_argument("--method", choices=METHODS, default="ugmm")
    s.add_argument("--seed", type=int)
    s.add_argument("--force-phi-zero", action="store_true")
    s.add_argument("--max-outer", type=int)
    s.add_argument("--truth-models", help="true noise models for KL scoring "
                                          f"(default: {TRUTH_MODELS_FILE} beside the dataset)")
    s.add_argument("--record-wall-time", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="run all methods over simulated scenarios")
    common(s)
    s.add_argument("--seeds", help="e.g. 0-19 or 1,4,7")
    s.add_argument("--seed", type=int, help="single seed")
    s.add_argument("--dims", help="e.g. 1,2,3")
    s.add_argument("--T", type=int)
    s.add_argument("--max-outer", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--record-wall-time", action="store_true",
                   help="write wall times into results.csv (makes it non-reproducible)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("study-noise", help="noise-model learning study under pose uncertainty")
    common(s)
    s.add_argument("--seeds")
    s.add_argument("--omegas")
    s.add_argument("--deltas")
    s.add_argument("--N", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_study_noise)

    s = sub.add_parser("report", help="merge result CSVs and summarize")
    s.add_argument("results", help="directory containing result CSVs")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("default-config", help="print every default as an INI file")
    s.add_argument("--dim", type=int, choices=(1, 2, 3), default=2)
    s.set_defaults(func=cmd_default_config)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"mixloc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, ParseError, LengthMismatch) as exc:
        print(f"mixloc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mixloc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MixlocError as exc:
        print(f"mixloc: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"mixloc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
