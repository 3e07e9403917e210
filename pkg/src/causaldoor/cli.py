"""Command line interface: ``causaldoor {analyze,simulate,power,truth}``.

Exit codes: 0 success, 2 invalid input or arguments, 3 model fitting failure.
Tables print 4 decimals; JSON and CSV carry full precision and a
``schema_version`` field.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dataset import ColumnMap, ModelSpec, load_csv
from .exceptions import DoorError, ValidationError
from .pipeline import ANALYTIC_METHODS, SCHEMA_VERSION, AnalysisReport, analyze
from .simulation import (POWER_GRID, SCENARIOS, STUDY_METHODS, PowerTable, SimConfig, StudyReport,
                         dumps, mc_true_door, run_power_study, run_replication_study)

logger = logging.getLogger("causaldoor")

EXIT_OK, EXIT_INVALID, EXIT_FIT = 0, 2, 3


def _names(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _fmt(v) -> str:
    return "NA" if v is None or v != v else f"{v:.4f}"


def _table(header, rows) -> str:
    cells = [list(header)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# analyze

ANALYSIS_CSV_FIELDS = ("schema_version", "kind", "method", "cut", "estimate", "se", "ci_low", "ci_high",
                       "p_value", "n")


def analysis_csv(report: AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANALYSIS_CSV_FIELDS)
    for e in report.estimates:
        w.writerow([SCHEMA_VERSION, "estimate", e.method, "", repr(e.D_hat), repr(e.se),
                    repr(e.ci95[0]), repr(e.ci95[1]), repr(e.p_value), e.n])
    for f in report.forest:
        w.writerow([SCHEMA_VERSION, "dichotomized", f["method"], f["cut"], repr(f["estimate"]),
                    repr(f["se"]), repr(f["ci95"][0]), repr(f["ci95"][1]), repr(f["p_value"]), report.n])
    return buf.getvalue()


def analysis_table(report: AnalysisReport) -> str:
    n0, n1 = report.arm_sizes
    out = [f"n = {report.n} (treated {n1}, control {n0}), K = {report.K}\n\n"]
    rows = [(e.method, _fmt(e.D_hat), f"({_fmt(e.ci95[0])}, {_fmt(e.ci95[1])})", _fmt(e.se), _fmt(e.p_value))
            for e in report.estimates]
    out.append(_table(("Method", "Estimate", "95% Confidence Interval", "SE", "p-value"), rows))
    if report.forest:
        out.append(f"\nSequentially dichotomized (Y >= cut vs Y < cut), {report.forest[0]['method']}\n")
        rows = [(f["cut"], _fmt(f["estimate"]), f"({_fmt(f['ci95'][0])}, {_fmt(f['ci95'][1])})")
                for f in report.forest]
        out.append(_table(("Cut", "Estimate", "95% Confidence Interval"), rows))
    for w in report.warnings:
        out.append(f"warning: {w}\n")
    return "".join(out)


def cmd_analyze(args) -> tuple[str, str, str]:
    methods = _names(args.methods)
    for m in methods:
        if m not in ANALYTIC_METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {', '.join(ANALYTIC_METHODS)}")
    if not methods:
        raise ValidationError("no methods requested")
    ps, po = _names(args.ps_covars), _names(args.po_covars)
    covs = tuple(dict.fromkeys((*ps, *po)))
    ds = load_csv(args.data, ColumnMap(args.outcome, args.treatment, covs), args.levels,
                  complete_case=args.complete_case)
    spec = ModelSpec(ps, po, hajek=args.hajek, clip=args.clip, bootstrap=args.bootstrap)
    report = analyze(ds, spec, methods, dichotomize=args.dichotomize, truncate=args.truncate_ci,
                     seed=args.seed, n_jobs=args.threads)
    for w in report.warnings:
        logger.warning(w)
    return analysis_table(report), dumps(report.to_dict()), analysis_csv(report)


# simulation commands

def _config(args, delta: float) -> SimConfig:
    return SimConfig(n=args.n, replicates=args.reps, delta=delta, scenario=args.scenario, seed=args.seed,
                     truth_draws=args.draws)


def study_table(report: StudyReport) -> str:
    c = report.config
    head = (f"scenario {c.scenario}, N = {c.n}, delta = {c.delta:g}, D_true = {_fmt(report.d_true)}, "
            f"replicates {report.replicates}, failed {report.failures}\n\n")
    rows = [(r["method"], r["model"], _fmt(r["bias"]), _fmt(r["se"]), _fmt(r["see"]), _fmt(r["cp"]),
             _fmt(r["rejection"])) for r in report.rows]
    return head + _table(("Method", "Model", "Bias", "SE", "SEE", "CP", "Reject"), rows)


def cmd_simulate(args):
    report = run_replication_study(_config(args, args.delta), n_jobs=args.threads)
    return study_table(report), report.to_json(), report.to_csv()


def power_table(table: PowerTable) -> str:
    c = table.reports[0].config
    head = f"rejection rate of D = 0.5 at level 0.05, scenario {c.scenario}, N = {c.n}\n\n"
    rows = [("D_true", *(_fmt(t) for t in table.truths))]
    rows += [(m, *(_fmt(v) for v in table.rejection(m))) for m in STUDY_METHODS]
    return head + _table(("Delta", *(f"{d:g}" for d in table.deltas)), rows)


def cmd_power(args):
    deltas = tuple(float(d) for d in _names(args.deltas)) if args.deltas else POWER_GRID
    table = run_power_study(_config(args, 0.0), deltas=deltas, n_jobs=args.threads)
    return power_table(table), table.to_json(), table.to_csv()


def cmd_truth(args):
    config = SimConfig(delta=args.delta, seed=args.seed, truth_draws=args.draws)
    D, se = mc_true_door(config, return_se=True)
    doc = {"schema_version": SCHEMA_VERSION, "delta": float(args.delta), "d_true": D, "mc_se": se,
           "draws": args.draws, "seed": args.seed}
    text = f"D_true = {_fmt(D)} (Monte Carlo SE {_fmt(se)}, {args.draws} draws, delta = {args.delta:g})\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(doc.keys())
    w.writerow([repr(v) if isinstance(v, float) else v for v in doc.values()])
    return text, dumps(doc), buf.getvalue()


# parser

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _add_output(p):
    p.add_argument("--format", choices=("table", "json", "csv"), default="table",
                   help="stdout format (default: table)")
    p.add_argument("--out", type=Path, help="also write machine output here; .csv gives CSV, otherwise JSON")


def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="parallel workers (default: available cores); results do not depend on it")


def _add_study(p, delta=True):
    p.add_argument("--n", type=int, default=500, help="subjects per simulated dataset")
    p.add_argument("--reps", type=_positive_int, default=2000, help="replicates")
    if delta:
        p.add_argument("--delta", type=float, default=0.4, help="treatment effect on the cumulative logit")
    p.add_argument("--scenario", default="both-correct", help=f"one of {', '.join(SCENARIOS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws for the true D")
    _add_threads(p)
    _add_output(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causaldoor",
                                     description="Covariate-adjusted DOOR probability estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate D on a CSV dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--outcome", required=True, help="outcome column, integer 1..K, larger is better")
    p.add_argument("--treatment", required=True, help="treatment column, 0/1")
    p.add_argument("--levels", required=True, type=int, help="number of outcome levels K")
    p.add_argument("--ps-covars", default="", help="comma-separated propensity model covariates")
    p.add_argument("--po-covars", default="", help="comma-separated outcome model covariates")
    p.add_argument("--methods", default="dr", help=f"comma-separated subset of {','.join(ANALYTIC_METHODS)}")
    p.add_argument("--hajek", action="store_true", help="normalize IPTW weights (needs --bootstrap >= 100)")
    p.add_argument("--clip", type=float, default=0.0, help="clip propensities to [clip, 1-clip]")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0: none)")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--dichotomize", action="store_true", help="add sequentially dichotomized estimates")
    p.add_argument("--complete-case", action="store_true", help="drop rows with missing values")
    p.add_argument("--truncate-ci", action="store_true", help="truncate confidence intervals to [0, 1]")
    _add_threads(p)
    _add_output(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="replication study: bias, SE, SEE, coverage")
    _add_study(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="rejection rates over a grid of treatment effects")
    _add_study(p, delta=False)
    p.add_argument("--deltas", help="comma-separated effects (default 0,0.05,...,0.4)")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("truth", help="Monte Carlo true D for the simulation design")
    p.add_argument("--delta", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1_000_000)
    _add_output(p)
    p.set_defaults(func=cmd_truth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        table, json_text, csv_text = args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DoorError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    sys.stdout.write({"table": table, "json": json_text + "\n", "csv": csv_text}[args.format])
    if args.out is not None:
        text = csv_text if args.out.suffix.lower() == ".csv" else json_text + "\n"
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
