"""
Command-line front end.

Subcommands
-----------
build      tabulate a report or aggregate CSV into a table CSV
analyze    run one detection method on a table CSV
simulate   generate synthetic tables from a scenario and score methods

Every command writes a JSON manifest next to its outputs with the input and
output SHA-256 digests, the parameters and the argument vector. Exit codes:
0 success, 2 input error, 3 constraint violation, 4 usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bcpnn import bcpnn_signals, ic
from .disprop import flag_signals, prr, ror
from .ebayes import (
    eb_signal_table,
    fit_efron,
    fit_general_gamma,
    fit_gps,
    fit_km,
    parse_eb_rule,
    select_efron,
    select_grid,
)
from .errors import (
    DegenerateMarginals,
    DegenerateTable,
    DisjointnessViolation,
    EmptyInput,
    FitFailure,
    GridFailure,
    ImpossibleBaseline,
    MalformedInput,
    NoMatchingRows,
)
from .lrt import ext_mlr, mc_null_pvalue, pseudo_lrt
from .simulate import gen_null_conditional, gen_poisson_table, load_scenario, score
from .tables import (
    build_from_aggregates,
    build_from_reports,
    expected_baseline,
    filter_aes_by_keywords,
    read_aggregates_csv,
    read_reports_csv,
    read_table_csv,
    table_to_csv_text,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONSTRAINT = 3
EXIT_USAGE = 4

DISPROPORTIONALITY = ("prr", "ror")
LRT_METHODS = ("lrt", "ext-lrt", "pseudo-lrt")
EB_METHODS = ("gps", "general-gamma", "km", "efron")
METHODS = DISPROPORTIONALITY + ("bcpnn",) + LRT_METHODS + EB_METHODS

DEFAULT_RULES = {
    "prr": "ci_low>1",
    "ror": "ci_low>1",
    "bcpnn": "ic025>0",
    "gps": "eb05>2",
    "general-gamma": "prob>0.95",
    "km": "prob>0.95",
    "efron": "prob>0.95",
}


class UsageError(Exception):
    pass


# -- serialisation -------------------------------------------------------------


def fmt(x) -> str:
    """Numbers with 17 significant digits so they round-trip exactly."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_text(obj, indent=0) -> str:
    """JSON with 17-significant-digit floats and stable key order."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_text(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json_text(v, indent + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no NaN/inf literals
        return format(x, ".17g") if math.isfinite(x) else "null"
    return json.dumps(str(obj), ensure_ascii=False)


def write_json(path: Path, obj) -> None:
    path.write_text(_json_text(obj) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command, inputs, outputs, parameters, seed=None, argv=None):
    manifest = {
        "command": command,
        "tool": "pvkit",
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "argv": list(argv or []),
        "seed": seed,
        "parameters": parameters,
        "inputs": [{"path": str(p), "sha256": sha256(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": sha256(p)} for p in outputs],
    }
    write_json(path, manifest)
    return manifest


def _threads(value):
    if value is not None:
        n = value
    else:
        env = os.environ.get("PVKIT_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"PVKIT_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _read_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.lstrip().startswith("#")]


def _split(values) -> list[str]:
    out = []
    for v in values or []:
        out.extend(x.strip() for x in v.split(",") if x.strip())
    return out


# -- build -------------------------------------------------------------------


def cmd_build(args, argv=None) -> int:
    interest = _split(args.interest)
    if not interest:
        raise UsageError("--interest is required")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.reports:
            source = Path(args.reports)
            table = build_from_reports(read_reports_csv(source), interest)
            reference = []
            inputs = [source]
        else:
            source = Path(args.aggregates)
            if not args.reference_list:
                raise UsageError("--reference-list is required with --aggregates")
            reference = _read_list(args.reference_list)
            table = build_from_aggregates(read_aggregates_csv(source), interest, reference)
            inputs = [source, Path(args.reference_list)]
        keywords = None
        if args.ae_keywords:
            keywords = _read_list(args.ae_keywords)
            table = filter_aes_by_keywords(table, keywords)
            inputs.append(Path(args.ae_keywords))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table_to_csv_text(table), encoding="utf-8")
    manifest = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    write_manifest(
        manifest, "build", inputs, [out],
        {"interest": interest, "reference_drugs": reference, "ae_keywords": keywords},
        argv=argv,
    )
    return EXIT_OK


# -- analyze -----------------------------------------------------------------


def _cells(table):
    """Non-reference (row, column) pairs in row-major order."""
    return [(i, j) for i in table.non_reference_rows() for j in table.non_reference_columns()]


def _analyze_disprop(table, args, out_dir):
    res = prr(table) if args.method == "prr" else ror(table)
    rule = args.rule or DEFAULT_RULES[args.method]
    flags = flag_signals(res, rule)
    rows = []
    for i, j in _cells(table):
        est, lo, hi, defined = res.cell(i, j)
        rows.append([table.ae_labels[i], table.drug_labels[j], args.method, est, lo, hi,
                     defined, bool(flags[i, j])])
    path = out_dir / "results.csv"
    write_csv(path, ["ae", "drug", "method", "estimate", "ci_low", "ci_high", "defined", "flag"], rows)
    return [path], {"rule": rule}


def _analyze_bcpnn(table, args, out_dir):
    rule = args.rule or DEFAULT_RULES["bcpnn"]
    field, _, value = rule.replace(" ", "").partition(">")
    if field.lower() != "ic025" or not value:
        raise UsageError("bcpnn rule must have the form ic025>t")
    try:
        threshold = float(value)
    except ValueError:
        raise UsageError(f"bad threshold in rule {rule!r}") from None
    res = ic(table)
    flags = bcpnn_signals(res, threshold)
    rows = [
        [table.ae_labels[i], table.drug_labels[j], res.ic_mean[i, j], res.ic_variance[i, j],
         res.ic025[i, j], bool(flags[i, j])]
        for i, j in _cells(table)
    ]
    path = out_dir / "results.csv"
    write_csv(path, ["ae", "drug", "ic_mean", "ic_var", "ic025", "flag"], rows)
    return [path], {"rule": rule}


def _drug_indices(table, names):
    if not names:
        return table.non_reference_columns()
    try:
        return [table.drug_index(d) for d in names]
    except ValueError as exc:
        raise UsageError(f"unknown drug in --drugs: {exc}") from None


def _warn_no_reference(table, method):
    if table.reference_col_index is None:
        print(
            f"warning: table has no 'other drugs' column; {method} baselines use the listed drugs only",
            file=sys.stderr,
        )


def _analyze_lrt(table, args, out_dir, threads):
    drugs = _drug_indices(table, _split(args.drugs))
    one_sided = not args.two_sided
    if args.method == "lrt":
        results = [
            mc_null_pvalue(table, j, args.reps, args.seed, one_sided, args.alpha, threads)
            for j in drugs
        ]
    elif args.method == "ext-lrt":
        results = [ext_mlr(table, drugs, args.reps, args.seed, one_sided, args.alpha, threads)]
    else:
        _warn_no_reference(table, args.method)
        results = pseudo_lrt(table, drugs, args.model, args.reps, args.seed, args.alpha, threads)

    rows, cell_rows, heat = [], [], []
    rows_idx = table.non_reference_rows()
    E = expected_baseline(table).expected
    for r in results:
        label = (
            "|".join(table.drug_labels[j] for j in drugs) if args.method == "ext-lrt"
            else table.drug_labels[r.drug_index]
        )
        rows.append([label, r.statistic, r.p_value, bool(r.decision), table.ae_labels[r.argmax_ae],
                     r.replications, r.seed, r.model])
        j = r.drug_index
        for i in rows_idx:
            cell = [table.ae_labels[i], table.drug_labels[j], r.cell_statistics[i],
                    r.cell_p_values[i], bool(r.cell_p_values[i] < args.alpha)]
            cell_rows.append(cell)
            heat.append({
                "ae": table.ae_labels[i], "drug": table.drug_labels[j],
                "N": int(table.counts[i, j]), "E": float(E[i, j]),
                "measure": float(r.cell_p_values[i]), "signal": bool(r.cell_p_values[i] < args.alpha),
            })
    results_path = out_dir / "results.csv"
    write_csv(results_path, ["drug", "statistic", "p_value", "decision", "argmax_ae", "reps", "seed", "model"], rows)
    cells_path = out_dir / "cells.csv"
    write_csv(cells_path, ["ae", "drug", "statistic", "p_value", "decision"], cell_rows)
    heat_path = out_dir / "heatmap.json"
    write_json(heat_path, {"method": args.method, "measure": "p_value", "cells": heat})
    params = {"reps": args.reps, "alpha": args.alpha, "one_sided": one_sided, "drugs": drugs}
    if args.method == "pseudo-lrt":
        params["model"] = args.model
    return [results_path, cells_path, heat_path], params


def _fit_prior(table, args):
    method = args.method
    if method == "gps":
        return fit_gps(table)
    if method == "general-gamma":
        return fit_general_gamma(table, K=args.components, dirichlet_alpha=args.dirichlet_alpha)
    support = select_grid(table, K=args.grid_size)
    if method == "km":
        return fit_km(table, support=support)
    if args.c0 is not None and args.df is not None:
        return fit_efron(table, support=support, c0=args.c0, p=args.df)
    return select_efron(table, support=support)[0]


def _analyze_eb(table, args, out_dir):
    _warn_no_reference(table, args.method)
    rule = args.rule or DEFAULT_RULES[args.method]
    try:
        parse_eb_rule(rule)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    prior = _fit_prior(table, args)
    res = eb_signal_table(prior, table, rule=rule, epsilon=args.epsilon)
    rows, heat, eye = [], [], []
    for i, j in _cells(table):
        ae, drug = table.ae_labels[i], table.drug_labels[j]
        rows.append([ae, drug, int(res.N[i, j]), res.E[i, j], res.median[i, j], res.q05[i, j],
                     res.q95[i, j], res.prob_signal[i, j], bool(res.decision[i, j]), args.method])
        heat.append({
            "ae": ae, "drug": drug, "N": int(res.N[i, j]), "E": float(res.E[i, j]),
            "measure": float(res.prob_signal[i, j]), "signal": bool(res.decision[i, j]),
            "prior_only": bool(res.prior_only[i, j]),
        })
        # cells whose 5% posterior quantile stays below 1 + epsilon are left out
        if res.q05[i, j] >= 1.0 + args.epsilon:
            eye.append({"ae": ae, "drug": drug, "median": float(res.median[i, j]),
                        "q05": float(res.q05[i, j]), "q95": float(res.q95[i, j])})
    results_path = out_dir / "results.csv"
    write_csv(results_path, ["ae", "drug", "N", "E", "median", "q05", "q95", "prob_signal", "decision", "method"], rows)
    heat_path = out_dir / "heatmap.json"
    write_json(heat_path, {"method": args.method, "measure": "prob_signal", "rule": rule, "cells": heat})
    eye_path = out_dir / "eyeplot.json"
    write_json(eye_path, {"method": args.method, "interval": 0.9, "cells": eye})
    prior_path = out_dir / "prior.json"
    prior_dict = prior.to_dict()
    prior_dict.get("fit", {}).pop("objective_trace", None)
    write_json(prior_path, prior_dict)
    params = {"rule": rule, "epsilon": args.epsilon}
    if args.method == "general-gamma":
        params.update(K=args.components, dirichlet_alpha=args.dirichlet_alpha)
    elif args.method in ("km", "efron"):
        params.update(grid_size=args.grid_size, c0=args.c0, df=args.df)
    return [results_path, heat_path, eye_path, prior_path], params


def cmd_analyze(args, argv=None) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    threads = _threads(args.threads)
    source = Path(args.table)
    table = read_table_csv(source)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.method in DISPROPORTIONALITY:
        outputs, params = _analyze_disprop(table, args, out_dir)
    elif args.method == "bcpnn":
        outputs, params = _analyze_bcpnn(table, args, out_dir)
    elif args.method in LRT_METHODS:
        outputs, params = _analyze_lrt(table, args, out_dir, threads)
    else:
        outputs, params = _analyze_eb(table, args, out_dir)
    params = {"method": args.method, **params}
    seed = args.seed if args.method in LRT_METHODS else None
    write_manifest(out_dir / "manifest.json", "analyze", [source], outputs, params, seed, argv)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def _table_seed(seed, t):
    return int(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(3, t)).generate_state(1)[0])


def _decisions(table, method, args, threads, seed):
    """Boolean matrix of per-cell signal calls for ``method``."""
    out = np.zeros(table.shape, dtype=bool)
    if method in DISPROPORTIONALITY:
        res = prr(table) if method == "prr" else ror(table)
        return flag_signals(res, DEFAULT_RULES[method])
    if method == "bcpnn":
        return bcpnn_signals(ic(table), 0.0)
    drugs = table.non_reference_columns()
    if method == "lrt":
        for j in drugs:
            r = mc_null_pvalue(table, j, args.reps, seed, True, args.alpha, threads)
            out[:, j] = r.cell_decisions
        return out
    if method == "ext-lrt":
        r = ext_mlr(table, drugs, args.reps, seed, True, args.alpha, threads)
        for j in drugs:
            out[:, j] = False
        out[:, r.drug_index] = r.cell_decisions
        return out
    if method == "pseudo-lrt":
        for r in pseudo_lrt(table, drugs, args.model, args.reps, seed, args.alpha, threads):
            out[:, r.drug_index] = r.cell_decisions
        return out
    args_ns = argparse.Namespace(**{**vars(args), "method": method})
    prior = _fit_prior(table, args_ns)
    return eb_signal_table(prior, table, rule=DEFAULT_RULES[method], epsilon=args.epsilon).decision


def cmd_simulate(args, argv=None) -> int:
    if args.tables < 1:
        raise MalformedInput("--tables must be at least 1")
    methods = _split(args.method)
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"unknown or missing methods: {', '.join(unknown) or '(none)'}")
    threads = _threads(args.threads)
    source = Path(args.scenario)
    scenario = load_scenario(source)
    generate = gen_poisson_table if args.generator == "poisson" else gen_null_conditional
    cols = [j for j in range(scenario.J) if not (scenario.reference_col and j == scenario.J - 1)]
    truth = scenario.truth[:, cols]
    totals, drug_totals = {}, {}
    for t in range(args.tables):
        table = generate(scenario, t)
        seed = _table_seed(scenario.seed, t)
        for m in methods:
            try:
                d = _decisions(table, m, args, threads, seed)[:, cols]
            except (FitFailure, GridFailure, DegenerateTable, DegenerateMarginals) as exc:
                print(f"warning: table {t}, {m}: {exc}", file=sys.stderr)
                d = np.zeros_like(truth)
            report = score(d, truth)
            totals[m] = report if m not in totals else totals[m] + report
            # a drug is declared when any of its cells is
            report = score(d.any(axis=0), truth.any(axis=0))
            drug_totals[m] = report if m not in drug_totals else drug_totals[m] + report
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, {
        "scenario": str(source),
        "tables": args.tables,
        "generator": args.generator,
        "methods": {m: {**r.to_dict(), "drug_level": drug_totals[m].to_dict()} for m, r in totals.items()},
    })
    manifest = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    write_manifest(
        manifest, "simulate", [source], [out],
        {"methods": methods, "tables": args.tables, "generator": args.generator,
         "reps": args.reps, "alpha": args.alpha, "model": args.model},
        scenario.seed, argv,
    )
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pvkit", description="Signal detection on spontaneous reporting tables.")
    p.add_argument("--version", action="version", version=f"pvkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="tabulate reports or aggregates into a table CSV")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--reports", help="CSV with report_id,drug,ae[,primary_suspect]")
    src.add_argument("--aggregates", help="CSV with ae,drug,count")
    b.add_argument("--interest", action="append", required=True,
                   help="drug of interest; repeat or comma-separate")
    b.add_argument("--reference-list", help="file with one reference drug per line (aggregates)")
    b.add_argument("--ae-keywords", help="file with one AE keyword per line; other rows are pooled")
    b.add_argument("--out", required=True, help="output table CSV")
    b.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")

    a = sub.add_parser("analyze", help="run a detection method on a table CSV")
    a.add_argument("--table", required=True)
    a.add_argument("--method", required=True, choices=METHODS)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--reps", type=int, default=999, help="Monte Carlo replicates")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--model", choices=("poisson", "zip"), default="poisson", help="pseudo-LRT null model")
    a.add_argument("--two-sided", action="store_true", help="LRT without the one-sided restriction")
    a.add_argument("--drugs", action="append", help="drug labels to test (default: all but reference)")
    a.add_argument("--epsilon", type=float, default=0.001)
    a.add_argument("--rule", help="decision rule, e.g. prob>0.95, eb05>2, ci_low>1, ic025>0")
    a.add_argument("--components", type=int, default=100, help="general-gamma starting components")
    a.add_argument("--dirichlet-alpha", type=float, default=0.1)
    a.add_argument("--grid-size", type=int, default=120, help="KM/Efron support size")
    a.add_argument("--c0", type=float, help="Efron penalty (with --df; otherwise AIC search)")
    a.add_argument("--df", type=int, help="Efron spline degrees of freedom")
    a.add_argument("--threads", type=int, help="worker threads (default: $PVKIT_THREADS or 1)")

    s = sub.add_parser("simulate", help="score methods on synthetic tables")
    s.add_argument("--scenario", required=True, help="scenario JSON")
    s.add_argument("--tables", type=int, required=True)
    s.add_argument("--method", action="append", required=True, help="method(s); repeat or comma-separate")
    s.add_argument("--generator", choices=("poisson", "conditional"), default="poisson")
    s.add_argument("--out", required=True, help="metric report JSON")
    s.add_argument("--manifest")
    s.add_argument("--reps", type=int, default=999)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--model", choices=("poisson", "zip"), default="poisson")
    s.add_argument("--epsilon", type=float, default=0.001)
    s.add_argument("--components", type=int, default=100)
    s.add_argument("--dirichlet-alpha", type=float, default=0.1)
    s.add_argument("--grid-size", type=int, default=120)
    s.add_argument("--c0", type=float)
    s.add_argument("--df", type=int)
    s.add_argument("--threads", type=int)
    return p


_INPUT_ERRORS = (MalformedInput, EmptyInput, NoMatchingRows, FileNotFoundError, IsADirectoryError,
                 UnicodeDecodeError)
_CONSTRAINT_ERRORS = (DisjointnessViolation, DegenerateTable, DegenerateMarginals,
                      ImpossibleBaseline, FitFailure, GridFailure)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    commands = {"build": cmd_build, "analyze": cmd_analyze, "simulate": cmd_simulate}
    try:
        return commands[args.command](args, argv)
    except UsageError as exc:
        print(f"pvkit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"pvkit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _CONSTRAINT_ERRORS as exc:
        print(f"pvkit: constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT


if __name__ == "__main__":
    sys.exit(main())
