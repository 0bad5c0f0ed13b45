"""Command-line entry point: ``stepgam {fit,predict,export-sql,benchmark,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import synthetic
from .benchmark import run_benchmark, train_test_split
from .data import DEFAULT_MAX_BINS, DataError, Dataset, build_bins, load_csv
from .model import (ModelFormatError, SchemaError, export_sql, extract_model, load, predict_batch,
                    save)
from .optimizer import FitConfig, fit, set_threads
from .sparsity import SparsityWarning, agis_fit, group_l0_fit

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4

logger = logging.getLogger("stepgam")


class UsageError(Exception):
    pass


def default_lambda_f(dataset: Dataset, max_bins: int | None) -> float:
    """Starting point only; tune it (``--lambda-grid``)."""
    bins = max_bins or DEFAULT_MAX_BINS
    return 0.1 * dataset.n * float(np.std(dataset.target)) / bins


def _mse(model, dataset):
    return float(np.mean((predict_batch(model, dataset) - dataset.target) ** 2))


def _suffixed(path: Path, k: int) -> Path:
    return path.with_name(f"{path.stem}_k{k}{path.suffix}")


def _write_trace(path, rule, trace):
    with open(path, "w", encoding="utf-8") as fh:
        for r in trace:
            fh.write(json.dumps({"rule": rule, "update_index": r.update_index, "feature": r.feature,
                                 "score": None if r.score != r.score else r.score,
                                 "objective": r.objective, "wall_ms": r.wall_ms}) + "\n")


def _lambda_grid(dataset, args, base):
    train, valid = train_test_split(dataset, 0.2, args.seed)
    best = None
    for lam in base * np.logspace(-2, 2, args.lambda_grid):
        config = FitConfig(float(lam), args.max_bins, args.rule, max_block_updates=args.max_updates)
        state, bins = fit(train, config)
        mse = _mse(extract_model(state, bins, train), valid)
        print(f"  lambda_f={lam:.6g}  holdout_mse={mse:.6g}")
        if best is None or mse < best[1]:
            best = (float(lam), mse)
    print(f"selected lambda_f={best[0]:.6g}")
    return best[0]


def cmd_fit(args) -> int:
    if args.sparsity == "l0" and args.k is not None:
        raise UsageError("--k applies to --sparsity agis; group-l0 takes --lambda-s")
    if args.sparsity == "agis" and args.k is None:
        raise UsageError("--sparsity agis needs --k")
    if args.sparsity == "l0" and args.lambda_s is None:
        raise UsageError("--sparsity l0 needs --lambda-s")
    if args.sparsity == "none" and (args.k is not None or args.lambda_s is not None):
        raise UsageError("--k/--lambda-s need --sparsity")
    set_threads(args.threads)
    dataset = load_csv(args.data, args.target, args.missing)
    lam = args.lambda_f
    if lam is None:
        lam = default_lambda_f(dataset, args.max_bins)
        if args.lambda_grid:
            lam = _lambda_grid(dataset, args, lam)
        else:
            print(f"note: using default lambda_f={lam:.6g}; tune it with --lambda-grid N")
    kwargs = {"max_bins": args.max_bins, "selection_rule": args.rule,
              "max_block_updates": args.max_updates}
    if args.tol is not None:
        kwargs["stationarity_tol"] = args.tol
        kwargs["sweep_tol"] = args.tol
    config = FitConfig(lam, **kwargs)

    t0 = time.perf_counter()
    bin_map = build_bins(dataset, max_bins=config.max_bins)
    output = Path(args.output)
    print(f"n={dataset.n} p={dataset.p} lambda_f={lam:.6g}")
    if args.sparsity == "agis":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SparsityWarning)
            models = agis_fit(dataset, config, args.k, bin_map, local_search=not args.no_local_search)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        elapsed = time.perf_counter() - t0
        for size, (support, state) in enumerate(models, start=1):
            model = extract_model(state, bin_map, dataset, sparsity="agis", k=size)
            path = _suffixed(output, size)
            save(model, path)
            names = [dataset.feature_names[j] for j in support]
            print(f"k={size} support={names} updates={state.update_count} "
                  f"objective={state.objective:.10g} train_mse={_mse(model, dataset):.10g} -> {path}")
        print(f"elapsed={elapsed:.3f}s")
        return EXIT_OK

    if args.sparsity == "l0":
        support, state = group_l0_fit(dataset, config, args.lambda_s, bin_map,
                                      local_search=not args.no_local_search)
        meta = {"sparsity": "group_l0", "lambda_s": args.lambda_s}
        print(f"support={[dataset.feature_names[j] for j in support]}")
    else:
        state, _ = fit(dataset, config, bin_map)
        meta = {"sparsity": "none", "selection_rule": args.rule}
    elapsed = time.perf_counter() - t0
    model = extract_model(state, bin_map, dataset, **meta)
    save(model, output)
    if args.trace:
        _write_trace(args.trace, args.rule, state.trace)
    print(f"updates={state.update_count} objective={state.objective:.10g} "
          f"train_mse={_mse(model, dataset):.10g} elapsed={elapsed:.3f}s -> {output}")
    if not state.converged:
        print("warning: stopped at the update cap before reaching the tolerance", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _read_rows(path, missing):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    frame = frame.apply(pd.to_numeric, errors="coerce")
    if missing == "drop":
        frame = frame.dropna()
    return {c: frame[c].to_numpy(dtype=np.float64) for c in frame.columns}, len(frame)


def cmd_predict(args) -> int:
    model = load(args.model)
    columns, n = _read_rows(args.data, args.missing)
    if not model.shapes:
        preds = np.full(n, model.intercept)
    else:
        preds = predict_batch(model, columns)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("prediction\n")
        fh.writelines(f"{v!r}\n" for v in preds.tolist())
    print(f"wrote {n} predictions -> {args.output}")
    return EXIT_OK


def cmd_export_sql(args) -> int:
    model = load(args.model)
    mapping = dict(m.split("=", 1) for m in args.column) if args.column else None
    sql = export_sql(model, args.table, mapping)
    Path(args.output).write_text(sql + "\n", encoding="utf-8")
    print(f"wrote {len(model.shapes)} CASE chain(s) -> {args.output}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    set_threads(args.threads)
    dataset = load_csv(args.data, args.target, args.missing)
    lam = args.lambda_f if args.lambda_f is not None else default_lambda_f(dataset, args.max_bins)
    config = FitConfig(lam, args.max_bins, max_block_updates=args.max_updates)
    budgets = [int(b) for b in args.budget_updates.split(",")] if args.budget_updates else []
    report = run_benchmark(dataset, config, args.test_fraction, args.seed, budgets)
    print(f"train={report.n_train} test={report.n_test} lambda_f={lam:.6g} "
          f"target objective (1% above best)={report.target_objective:.10g}")
    for rule, res in report.results.items():
        line = (f"{rule:>7}: updates={res.updates} to_1pct={res.updates_to_target} "
                f"wall={res.wall_seconds:.3f}s train_mse={res.train_mse:.6g}")
        if res.test_mse is not None:
            line += f" test_mse={res.test_mse:.6g}"
        print(line)
        if res.budget_test_mse and res.test_mse is not None:
            curve = " ".join(f"{b}:{m:.5g}" for b, m in res.budget_test_mse.items())
            print(f"         test_mse by update budget  {curve}")
    print(f"cyclic/greedy update ratio to 1%: {report.update_ratio:.2f}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            for rec in report.records:
                fh.write(json.dumps(rec) + "\n")
    if args.report:
        doc = report.to_dict()
        doc.pop("records")
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "additive":
        ds = synthetic.additive(args.n, args.p, args.seed, informative=args.informative, rho=args.rho)
    elif args.kind == "planted":
        ds = synthetic.planted_support(args.n, seed=args.seed)
    else:
        ds = synthetic.planted_step(args.n, seed=args.seed)
    frame = pd.DataFrame(ds.columns.T, columns=list(ds.feature_names))
    frame[ds.target_name] = ds.target
    frame.to_csv(args.output, index=False, float_format="%.17g")
    print(f"wrote {ds.n}x{ds.p} {args.kind} dataset -> {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepgam", description="Piecewise-constant additive models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, target=True):
        p.add_argument("--data", required=True)
        if target:
            p.add_argument("--target", required=True)
        p.add_argument("--missing", choices=["error", "drop"], default="error")

    def bins_arg(p):
        p.add_argument("--max-bins", type=int, default=DEFAULT_MAX_BINS)

    p = sub.add_parser("fit", help="fit a model and write its JSON document")
    data_args(p)
    p.add_argument("--lambda-f", type=float)
    p.add_argument("--lambda-grid", type=int, default=0, metavar="N",
                   help="pick lambda_f from N log-spaced values by holdout MSE")
    bins_arg(p)
    p.add_argument("--sparsity", choices=["none", "agis", "l0"], default="none")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--no-local-search", action="store_true")
    p.add_argument("--rule", choices=["greedy", "cyclic"], default="greedy")
    p.add_argument("--tol", type=float, help="stationarity (greedy) / sweep (cyclic) tolerance")
    p.add_argument("--max-updates", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write per-update JSON lines here")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score a CSV with a saved model")
    p.add_argument("--model", required=True)
    data_args(p, target=False)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-sql", help="emit a SQL SELECT computing the model")
    p.add_argument("--model", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--column", action="append", metavar="FEATURE=COLUMN")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_export_sql)

    p = sub.add_parser("benchmark", help="compare greedy and cyclic block selection")
    data_args(p)
    p.add_argument("--lambda-f", type=float)
    bins_arg(p)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--budget-updates", default="1,2,3,4,5")
    p.add_argument("--max-updates", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="per-update JSON lines")
    p.add_argument("--report", help="summary JSON")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth", help="write a synthetic dataset to CSV")
    p.add_argument("--kind", choices=["additive", "planted", "step"], default="additive")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--p", type=int, default=16)
    p.add_argument("--informative", type=int)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stepgam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, ModelFormatError, FileNotFoundError) as exc:
        print(f"stepgam: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
