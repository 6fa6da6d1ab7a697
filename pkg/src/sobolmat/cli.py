"""Command line entry point.

Subcommands::

    sobolmat truth  --out DIR [--oracle-points N]
    sobolmat sample --n N --inputs M --noise E --seed S --out DIR
    sobolmat fit    --design FILE --out DIR [--seed S] [--restarts R]
    sobolmat gsa    --surrogate FILE --subsets "0;0,1" --out DIR [--no-errors]
    sobolmat bench  --grid FILE --out DIR [--seed S] [--workers W] [--desk | --full]
    sobolmat report --results DIR --out DIR [--per-M]

Exit status is 0 on success, 1 for usage or input errors and 2 when a
numerical step fails (singular Gram matrix, zero variance and the like).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .axes import AxisSet, write_matrix_csv
from .bench import (
    BenchmarkGrid,
    aggregate,
    read_cells_csv,
    run_grid,
    write_heatmaps,
    write_results,
)
from .exceptions import DomainError, OddRowCountError, SobolMatError
from .gsa import compute_reports, oracle_sobol_matrix
from .sampling import benchmark_design, read_design_csv, write_design_csv
from .surrogate import GaussianProcessSurrogate
from .testfuncs import mnu9, truth_table

log = logging.getLogger("sobolmat")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with status 1 instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def parse_subsets(text: str, ambient: int) -> list[AxisSet]:
    """``"0;0,1;0-1-2"`` -> three axis sets; ``"prefixes"`` -> every leading prefix."""
    if text.strip() == "prefixes":
        return [AxisSet(range(k), ambient) for k in range(1, ambient + 1)]
    return [AxisSet.parse(part, ambient) for part in text.split(";") if part.strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_truth(args) -> int:
    out = _out_dir(args.out)
    for k in (5, 4, 3, 2, 1):
        write_matrix_csv(out / f"s{k}.csv", truth_table(k))
        if args.oracle_points:
            est = oracle_sobol_matrix(mnu9, AxisSet(range(k), 5), args.oracle_points, seed=args.seed)
            write_matrix_csv(out / f"s{k}_oracle.csv", est)
    return EXIT_OK


def cmd_sample(args) -> int:
    out = _out_dir(args.out)
    design = benchmark_design(args.n, args.inputs, args.noise, args.seed)
    write_design_csv(out / "design.csv", design)
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _out_dir(args.out)
    design = read_design_csv(args.design)
    gp = GaussianProcessSurrogate(n_restarts=args.restarts, random_state=args.seed)
    gp.fit(design.inputs, design.outputs)
    gp.save(out / "surrogate.json")
    return EXIT_OK


def cmd_gsa(args) -> int:
    out = _out_dir(args.out)
    gp = GaussianProcessSurrogate.load(args.surrogate)
    subsets = parse_subsets(args.subsets, gp.n_features_in_)
    reports = compute_reports(gp, subsets, compute_errors=not args.no_errors, method=args.method)
    summary = []
    for rep in reports:
        tag = rep.m.label()
        write_matrix_csv(out / f"S_{tag}.csv", rep.S)
        write_matrix_csv(out / f"S_total_{tag}.csv", rep.S_total)
        write_matrix_csv(out / f"V_{tag}.csv", rep.V)
        if rep.T is not None:
            write_matrix_csv(out / f"T_{tag}.csv", rep.T)
            write_matrix_csv(out / f"T_total_{tag}.csv", rep.T_total)
        summary.append({"m": list(rep.m.axes), "diagnostics": _jsonable(rep.diagnostics)})
    write_matrix_csv(out / "D.csv", reports[0].D)
    with open(out / "reports.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.full:
        grid = BenchmarkGrid.full()
    elif args.grid:
        grid = BenchmarkGrid.load(args.grid)
    else:
        grid = BenchmarkGrid.desk()
    if args.seed is not None:
        grid.seed = args.seed
    if args.no_errors:
        grid.compute_errors = False
    results = run_grid(grid, workers=args.workers)
    write_results(results, _out_dir(args.out), grid)
    failed = [r for r in results if r.status != "ok"]
    if failed:
        log.warning("%d of %d folds failed numerically", len(failed), len(results))
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.results)
    cells = read_cells_csv(src / "cells.csv")
    totals = read_cells_csv(src / "totals.csv") if (src / "totals.csv").exists() else []
    fits = read_cells_csv(src / "fits.csv") if (src / "fits.csv").exists() else []
    tables = aggregate(cells, totals, fits, pool_M=not args.per_M)
    write_heatmaps(tables, _out_dir(args.out))
    return EXIT_OK


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sobolmat", description="Sobol' matrices of multi-output Gaussian process surrogates.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("truth", help="write the reference closed Sobol' matrices")
    t.add_argument("--out", required=True)
    t.add_argument("--oracle-points", type=int, default=0, help="also write pick-freeze estimates")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_truth)

    s = sub.add_parser("sample", help="draw a noisy latin hypercube design of the nine-output model")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--inputs", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    f = sub.add_parser("fit", help="fit a surrogate to a design CSV")
    f.add_argument("--design", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--restarts", type=int, default=8)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gsa", help="Sobol' matrices and standard errors of a saved surrogate")
    g.add_argument("--surrogate", required=True)
    g.add_argument("--subsets", default="prefixes", help='";"-separated axis lists or "prefixes"')
    g.add_argument("--method", choices=["quadrature", "closed"], default="quadrature")
    g.add_argument("--no-errors", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gsa)

    b = sub.add_parser("bench", help="run the benchmark grid")
    which = b.add_mutually_exclusive_group()
    which.add_argument("--grid", help="grid JSON file")
    which.add_argument("--desk", action="store_true", help="built-in desk-scale grid (default)")
    which.add_argument("--full", action="store_true", help="the full published grid (hours)")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--no-errors", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="recompute heat maps from a bench output directory")
    r.add_argument("--results", required=True)
    r.add_argument("--per-M", action="store_true", help="one table per M instead of pooling")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DomainError, OddRowCountError) as exc:
        print(f"sobolmat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SobolMatError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"sobolmat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"sobolmat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
