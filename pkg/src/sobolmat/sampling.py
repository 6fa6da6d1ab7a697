"""Latin hypercube designs, two-fold splits and design-matrix I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import DomainError, OddRowCountError
from .testfuncs import NoiseSpec, add_noise, mnu9, standardize

__all__ = [
    "DesignMatrix",
    "latin_hypercube",
    "split_two_fold",
    "quantile_transform",
    "benchmark_design",
    "write_design_csv",
    "read_design_csv",
]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class DesignMatrix:
    """Inputs in the unit hypercube paired row-by-row with outputs."""

    inputs: np.ndarray
    outputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.asarray(self.outputs, dtype=float)
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        self.outputs = outputs
        if self.inputs.shape[0] < 1:
            raise ValueError("a design needs at least one row")
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} input rows but {self.outputs.shape[0]} output rows"
            )
        if np.any(self.inputs < 0) or np.any(self.inputs > 1):
            raise DomainError("design inputs must lie in [0, 1]")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]

    def take(self, rows, **meta) -> "DesignMatrix":
        rows = np.asarray(rows)
        return DesignMatrix(self.inputs[rows], self.outputs[rows], {**self.meta, **meta})


def latin_hypercube(n: int, m: int, seed=None) -> np.ndarray:
    """Jittered latin hypercube of ``n`` points in ``[0, 1]^m``.

    Each axis is cut into ``n`` equal strata and every stratum receives exactly
    one point, placed uniformly at random inside it.
    """
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    rng = _rng(seed)
    jitter = rng.random((n, m))
    strata = np.column_stack([rng.permutation(n) for _ in range(m)])
    points = (strata + jitter) / n
    # rounding can push a point across a stratum edge; nudge it back
    for _ in range(8):
        cell = np.floor(points * n)
        high, low = cell > strata, cell < strata
        if not (high.any() or low.any()):
            break
        points[high] = np.nextafter(points[high], 0.0)
        points[low] = np.nextafter(points[low], 1.0)
    return points


def split_two_fold(design: DesignMatrix, seed=None) -> tuple[DesignMatrix, DesignMatrix]:
    """Randomly split an even-sized design into two disjoint halves.

    The first half trains fold 0 and validates fold 1; the second half does the
    reverse.  Both folds use this single partition.
    """
    n = design.n_samples
    if n % 2:
        raise OddRowCountError(f"cannot split {n} rows into two equal folds")
    order = _rng(seed).permutation(n)
    half = n // 2
    first, second = np.sort(order[:half]), np.sort(order[half:])
    return design.take(first, fold=0), design.take(second, fold=1)


def quantile_transform(u, cdf_inverse: Callable[[np.ndarray], np.ndarray] | None = None):
    """Push unit-interval values through a quantile function (inverse CDF)."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise DomainError("quantile transform expects values in [0, 1]")
    if cdf_inverse is None:
        return u.copy()
    return np.asarray(cdf_inverse(u), dtype=float)


def benchmark_design(n: int, m: int, noise: float, seed: int) -> DesignMatrix:
    """Latin hypercube of mnu9 samples, standardized and then noised."""
    ss = np.random.SeedSequence(seed)
    lhs_seed, noise_seed = ss.spawn(2)
    u = latin_hypercube(n, m, np.random.default_rng(lhs_seed))
    f, _, _ = standardize(mnu9(u))
    noise_key = int(noise_seed.generate_state(1)[0])
    y = add_noise(f, NoiseSpec(noise, noise_key))
    return DesignMatrix(u, y, {"seed": seed, "E": noise, "M": m, "N": n})


def write_design_csv(path, design: DesignMatrix) -> None:
    header = [f"u{j}" for j in range(design.n_inputs)] + [f"y{l}" for l in range(design.n_outputs)]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.hstack([design.inputs, design.outputs]):
            writer.writerow(["%.17g" % v for v in row])


def read_design_csv(path) -> DesignMatrix:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    if len(u_cols) + len(y_cols) != len(header):
        raise ValueError("design CSV columns must be named u<j> or y<l>")
    return DesignMatrix(data[:, u_cols], data[:, y_cols])
