"""Benchmark harness: sweep (M, N, E), fit two folds per cell, score Sobol' matrices.

Every cell draws a latin hypercube of ``2N`` points of the nine-output model,
standardizes and noises the outputs, splits the rows into two folds and, for
each fold, fits a surrogate on one half and validates it on the other.  Sobol'
matrices of the fitted surrogate are compared against ground truth and the
results are written as flat CSV tables plus heat-map CSVs.

Determinism: every random draw in a cell derives from
``SeedSequence(seed, spawn_key=(M, N, bits(E)))`` and the linear algebra in a
cell runs single-threaded, so output files do not depend on worker count or
scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .axes import AxisSet, prefix
from .exceptions import SobolMatError
from .gsa import compute_reports, filter_reports, oracle_sobol_matrix
from .sampling import benchmark_design, split_two_fold
from .surrogate import GaussianProcessSurrogate
from .testfuncs import mnu9, truth_table

log = logging.getLogger(__name__)

__all__ = [
    "BenchmarkGrid",
    "CellResult",
    "ElementRow",
    "ground_truth",
    "run_cell",
    "run_grid",
    "aggregate",
    "nearest_rank",
    "write_results",
    "read_cells_csv",
    "write_heatmaps",
]

DESK_N = [30, 90, 210, 512, 1024, 2048]
DESK_E = [0.0025, 0.1, 0.5, 1.0, 10**0.5]
FULL_N = [
    30, 50, 70, 90, 110, 130, 150, 170, 190, 210, 230, 260, 290, 320, 360, 400,
    440, 480, 525, 575, 630, 690, 755, 825, 900, 980, 1065, 1105, 1200, 1300,
    1410, 1530, 1660, 1800, 1950, 2110, 2280, 2460, 2710, 2930, 3170, 3430,
    3710, 4000, 4300, 4600, 4920,
]
FULL_E = [
    0.0025, 0.005, 0.01, 0.025, 0.05, 0.075, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
    0.8, 0.9, 1.0, 1.2, 1.5, 2.0, 5.0,
]
TABLE_INPUTS = 5
TRUTH_POINTS = 2**18

CELL_COLUMNS = ["M", "N", "E", "fold", "m", "l", "lprime", "S_est", "S_true", "A", "T", "score", "filtered"]
TOTAL_COLUMNS = ["M", "N", "E", "fold", "removed", "l", "lprime", "ST_est", "ST_true", "A", "T", "score", "filtered"]
FIT_COLUMNS = ["M", "N", "E", "fold", "l", "rmse", "sd", "status"]
FILTER_COLUMNS = ["fold", "M", "N", "E", "l", "reason"]


@dataclass
class BenchmarkGrid:
    """Which cells to run.  ``subsets`` is ``"default"`` or a list of axis lists."""

    M: list[int]
    N: list[int]
    E: list[float]
    seed: int = 0
    subsets: object = "default"
    compute_errors: bool = True
    surrogate: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = [int(v) for v in self.M]
        self.N = [int(v) for v in self.N]
        self.E = [float(v) for v in self.E]
        self.seed = int(self.seed)
        if not (self.M and self.N and self.E):
            raise ValueError("M, N and E lists must be non-empty")
        if any(m < TABLE_INPUTS for m in self.M):
            raise ValueError(f"every M must be at least {TABLE_INPUTS}")
        if any(n < 2 for n in self.N):
            raise ValueError("every N must be at least 2")
        if any(not (e >= 0 and math.isfinite(e)) for e in self.E):
            raise ValueError("every E must be finite and non-negative")
        if self.subsets != "default":
            self.subsets = [[int(a) for a in s] for s in self.subsets]

    @classmethod
    def desk(cls, seed: int = 0) -> "BenchmarkGrid":
        return cls([5, 7], list(DESK_N), list(DESK_E), seed)

    @classmethod
    def full(cls, seed: int = 0) -> "BenchmarkGrid":
        return cls([5, 7], list(FULL_N), list(FULL_E), seed)

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkGrid":
        known = {"M", "N", "E", "seed", "subsets", "compute_errors", "surrogate"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "BenchmarkGrid":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def schedule(self, M: int) -> list[AxisSet]:
        if self.subsets == "default":
            return [prefix(k, M) for k in range(1, M + 1)]
        return [AxisSet(s, M) for s in self.subsets]

    def cells(self) -> list[tuple[int, int, float]]:
        return [(M, N, E) for M in self.M for N in self.N for E in self.E]


@dataclass
class ElementRow:
    m: str
    l: int
    lprime: int
    est: float
    true: float
    A: float
    T: float
    score: float
    filtered: bool


@dataclass
class CellResult:
    """Metrics for one fold of one ``(M, N, E)`` cell."""

    M: int
    N: int
    E: float
    fold: int
    rmse: list[float] = field(default_factory=list)
    sd: list[float] = field(default_factory=list)
    elements: list[ElementRow] = field(default_factory=list)
    totals: list[ElementRow] = field(default_factory=list)
    removed: dict[int, str] = field(default_factory=dict)
    status: str = "ok"

    @property
    def key(self):
        return (self.M, self.N, self.E, self.fold)


def cell_seed(seed: int, M: int, N: int, E: float) -> np.random.SeedSequence:
    """Seed sequence for one cell, keyed by its coordinates (E by its float bits)."""
    (bits,) = struct.unpack("<Q", struct.pack("<d", float(E)))
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(M), int(N), bits))


def _as_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@lru_cache(maxsize=None)
def _oracle_truth(axes: tuple[int, ...]) -> np.ndarray:
    return oracle_sobol_matrix(mnu9, AxisSet(axes, TABLE_INPUTS), TRUTH_POINTS, seed=0)


def ground_truth(m: AxisSet) -> np.ndarray:
    """Closed Sobol' matrix of the nine-output model for retained axes ``m``.

    The model reads only its first five inputs, so ``m`` is first reduced to
    those.  For ``M`` in ``{5, 7}`` and a leading-axis subset the tabulated
    matrix is used; otherwise a 2^18-point pick-freeze estimate (cached).
    """
    reduced = tuple(a for a in m.axes if a < TABLE_INPUTS)
    if m.ambient in (5, 7) and reduced == tuple(range(len(reduced))):
        return truth_table(len(reduced))
    if not reduced:
        return truth_table(0)
    return _oracle_truth(reduced).copy()


def _score_rows(reports, removed: set[int], compute_errors: bool, M: int):
    elements, totals = [], []
    full = AxisSet.full(M)
    S_M_true = ground_truth(full)
    for rep in reports:
        truth = ground_truth(rep.m)
        L = rep.S.shape[0]
        dropped = rep.m.complement()
        for l in range(L):
            for lp in range(L):
                filt = l in removed or lp in removed
                T = float(rep.T[l, lp]) if compute_errors else float("nan")
                A = abs(float(rep.S[l, lp]) - float(truth[l, lp]))
                score = A / T if T > 0 else float("nan")
                elements.append(
                    ElementRow(rep.m.label(), l, lp, float(rep.S[l, lp]), float(truth[l, lp]), A, T, score, filt)
                )
                if 1 <= len(dropped) <= 2:
                    st_true = float(S_M_true[l, lp] - truth[l, lp])
                    Tt = float(rep.T_total[l, lp]) if compute_errors else float("nan")
                    At = abs(float(rep.S_total[l, lp]) - st_true)
                    totals.append(
                        ElementRow(
                            dropped.label(), l, lp, float(rep.S_total[l, lp]), st_true, At, Tt,
                            At / Tt if Tt > 0 else float("nan"), filt,
                        )
                    )
    return elements, totals


def run_cell(
    M: int, N: int, E: float, seed: int, subsets=None, compute_errors=True, surrogate=None, folds=(0, 1)
):
    """Run the folds of one cell and return one :class:`CellResult` per fold.

    Both folds share one ``2N``-point design and one split, so running a
    single fold gives the same numbers as that fold of a full run.  A
    numerical failure in one fold (e.g. an indefinite Gram matrix) is recorded
    in that fold's ``status`` rather than raised.
    """
    grid = BenchmarkGrid([M], [N], [E], seed, subsets or "default", compute_errors, surrogate or {})
    schedule = grid.schedule(M)
    design_ss, split_ss, fit_ss = cell_seed(seed, M, N, E).spawn(3)
    with threadpool_limits(limits=1):
        design = benchmark_design(2 * N, M, E, _as_int(design_ss))
        halves = split_two_fold(design, _as_int(split_ss))
        results = []
        for fold in folds:
            train, test = halves[fold], halves[1 - fold]
            res = CellResult(M, N, float(E), fold)
            try:
                gp = GaussianProcessSurrogate(random_state=_as_int(fit_ss), **grid.surrogate)
                gp.fit(train.inputs, train.outputs)
                rmse, sd = gp.validate(test.inputs, test.outputs)
                res.rmse, res.sd = [float(v) for v in rmse], [float(v) for v in sd]
                reports = compute_reports(gp, schedule, compute_errors=compute_errors)
                verdict = filter_reports(reports)
                res.removed = dict(verdict.reasons)
                res.elements, res.totals = _score_rows(reports, set(verdict.removed), compute_errors, M)
            except (SobolMatError, np.linalg.LinAlgError) as exc:
                log.warning("cell M=%d N=%d E=%g fold %d failed: %s", M, N, E, fold, exc)
                res.status = f"failed: {type(exc).__name__}"
            results.append(res)
    return results


def _run_cell_job(args):
    return run_cell(*args)


def run_grid(grid: BenchmarkGrid, workers: int = 1) -> list[CellResult]:
    """Run every cell of ``grid``; results are sorted by ``(M, N, E, fold)``."""
    jobs = [
        (M, N, E, grid.seed, None if grid.subsets == "default" else grid.subsets, grid.compute_errors, grid.surrogate)
        for M, N, E in grid.cells()
    ]
    results: list[CellResult] = []
    if workers <= 1:
        for job in jobs:
            results.extend(_run_cell_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            for pair in pool.map(_run_cell_job, jobs):
                results.extend(pair)
    return sorted(results, key=lambda r: r.key)


# ---------------------------------------------------------------------------
# aggregation


def nearest_rank(values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q n)``-th smallest value (``q=0.5`` is the median)."""
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return float("nan")
    return float(np.quantile(arr, q, method="inverted_cdf"))


def aggregate(cells: Iterable[dict], totals: Iterable[dict] = (), fits: Iterable[dict] = (), pool_M: bool = True):
    """Heat-map tables keyed by name, each a dict ``{(N, E): value}``.

    ``cells``, ``totals`` and ``fits`` are row dicts as written to the CSV
    files.  Filtered elements are excluded; scores only count where ``T > 0``.
    With ``pool_M`` false every table is split per ``M`` (name suffix ``_M<M>``).
    """
    groups: dict[str, dict[tuple, list[float]]] = {}

    def add(name, row, value):
        if value is None or not math.isfinite(value):
            return
        suffix = "" if pool_M else f"_M{row['M']}"
        groups.setdefault(name + suffix, {}).setdefault((int(row["N"]), float(row["E"])), []).append(value)

    for row in cells:
        if _truthy(row["filtered"]):
            continue
        add("A", row, _float(row["A"]))
        add("Z", row, _float(row["score"]))
    for row in totals:
        if _truthy(row["filtered"]):
            continue
        add("AT", row, _float(row["A"]))
    for row in fits:
        if row.get("status", "ok") != "ok":
            continue
        add("RMSE", row, _float(row["rmse"]))
        add("SD", row, _float(row["sd"]))
    tables: dict[str, dict] = {}
    for name, by_cell in groups.items():
        base, _, suffix = name.partition("_")
        suffix = f"_{suffix}" if suffix else ""
        if base in ("RMSE", "SD"):
            tables[f"{base}_mean{suffix}"] = {k: float(np.mean(v)) for k, v in by_cell.items()}
        else:
            tables[f"{base}_median{suffix}"] = {k: nearest_rank(v, 0.5) for k, v in by_cell.items()}
            tables[f"{base}_q90{suffix}"] = {k: nearest_rank(v, 0.9) for k, v in by_cell.items()}
    return tables


def _truthy(v) -> bool:
    return v is True or str(v).lower() in ("true", "1")


def _float(v):
    if v is None or v == "":
        return None
    return float(v)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


def write_heatmaps(tables: dict, out_dir) -> list[Path]:
    """One CSV per table: rows by ``-log10 E`` descending, columns by ``log10 N`` ascending."""
    out_dir = Path(out_dir)
    paths = []
    for name in sorted(tables):
        table = tables[name]
        Ns = sorted({k[0] for k in table})
        Es = sorted({k[1] for k in table})  # ascending E == descending -log10 E
        path = out_dir / f"heatmap_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["neg_log10_E"] + [_fmt(math.log10(n)) for n in Ns])
            for E in Es:
                label = _fmt(-math.log10(E)) if E > 0 else "inf"
                w.writerow([label] + [_fmt(table.get((n, E), float("nan"))) for n in Ns])
        paths.append(path)
    return paths


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _row_dicts(columns, rows):
    return [dict(zip(columns, r)) for r in rows]


def write_results(results: Sequence[CellResult], out_dir, grid: BenchmarkGrid | None = None) -> dict:
    """Write cells, totals, fits, filter log and heat maps; return the heat-map tables."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = sorted(results, key=lambda r: r.key)
    cell_rows, total_rows, fit_rows, filter_rows = [], [], [], []
    for r in results:
        head = [r.M, r.N, r.E, r.fold]
        for e in r.elements:
            cell_rows.append(head + [e.m, e.l, e.lprime, e.est, e.true, e.A, e.T, e.score, e.filtered])
        for e in r.totals:
            total_rows.append(head + [e.m, e.l, e.lprime, e.est, e.true, e.A, e.T, e.score, e.filtered])
        if r.status != "ok":
            fit_rows.append(head + [-1, float("nan"), float("nan"), r.status])
        for l, (rm, sd) in enumerate(zip(r.rmse, r.sd)):
            fit_rows.append(head + [l, rm, sd, r.status])
        for l in sorted(r.removed):
            filter_rows.append([r.fold, r.M, r.N, r.E, l, r.removed[l]])
    _write_csv(out_dir / "cells.csv", CELL_COLUMNS, cell_rows)
    _write_csv(out_dir / "totals.csv", TOTAL_COLUMNS, total_rows)
    _write_csv(out_dir / "fits.csv", FIT_COLUMNS, fit_rows)
    _write_csv(out_dir / "filter_log.csv", FILTER_COLUMNS, filter_rows)
    if grid is not None:
        with open(out_dir / "grid.json", "w") as fh:
            json.dump(grid.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    tables = aggregate(
        _row_dicts(CELL_COLUMNS, cell_rows),
        _row_dicts(TOTAL_COLUMNS, total_rows),
        _row_dicts(FIT_COLUMNS, fit_rows),
    )
    write_heatmaps(tables, out_dir)
    return tables


def read_cells_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
