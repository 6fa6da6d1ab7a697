"""Axis subsets and the small amount of elementwise tensor algebra built on them.

An :class:`AxisSet` names which determined inputs a reduced model keeps.  It is
stored sorted, so ``AxisSet((2, 0), 3) == AxisSet((0, 2), 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import HadamardDivisionError

__all__ = [
    "AxisSet",
    "complement",
    "hadamard_div",
    "prefix",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_tensor4_csv",
    "read_tensor4_csv",
]


@dataclass(frozen=True)
class AxisSet:
    """Sorted subset of the determined input axes ``0..ambient-1``."""

    axes: tuple[int, ...]
    ambient: int

    def __init__(self, axes: Iterable[int], ambient: int):
        ambient = int(ambient)
        if ambient < 0:
            raise ValueError("ambient dimension must be non-negative")
        given = [int(a) for a in axes]
        clean = tuple(sorted(set(given)))
        if len(clean) != len(given):
            raise ValueError(f"repeated axis in {tuple(given)}")
        for a in clean:
            if not 0 <= a < ambient:
                raise ValueError(f"axis {a} outside [0, {ambient})")
        object.__setattr__(self, "axes", clean)
        object.__setattr__(self, "ambient", ambient)

    @classmethod
    def full(cls, ambient: int) -> "AxisSet":
        return cls(range(ambient), ambient)

    @classmethod
    def empty(cls, ambient: int) -> "AxisSet":
        return cls((), ambient)

    @classmethod
    def coerce(cls, m, ambient: int) -> "AxisSet":
        """Accept an AxisSet or any iterable of ints."""
        if isinstance(m, AxisSet):
            if m.ambient != ambient:
                raise ValueError(f"axis set lives in dimension {m.ambient}, expected {ambient}")
            return m
        return cls(m, ambient)

    def __len__(self) -> int:
        return len(self.axes)

    def __iter__(self):
        return iter(self.axes)

    def __contains__(self, axis) -> bool:
        return axis in self.axes

    @property
    def is_full(self) -> bool:
        return len(self.axes) == self.ambient

    @property
    def is_empty(self) -> bool:
        return not self.axes

    def complement(self) -> "AxisSet":
        return AxisSet((a for a in range(self.ambient) if a not in self.axes), self.ambient)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.ambient, dtype=bool)
        out[list(self.axes)] = True
        return out

    def union(self, other: "AxisSet") -> "AxisSet":
        return AxisSet(set(self.axes) | set(other.axes), self.ambient)

    def intersection(self, other: "AxisSet") -> "AxisSet":
        return AxisSet(set(self.axes) & set(other.axes), self.ambient)

    def label(self) -> str:
        """Compact text form used in file names and CSV cells, e.g. ``0-1-2``."""
        return "-".join(str(a) for a in self.axes) if self.axes else "none"

    @classmethod
    def parse(cls, text: str, ambient: int) -> "AxisSet":
        text = text.strip()
        if text in ("", "none", "()"):
            return cls((), ambient)
        parts = text.replace("-", ",").split(",")
        return cls((int(p) for p in parts if p.strip()), ambient)

    def __repr__(self) -> str:
        return f"AxisSet({self.axes}, ambient={self.ambient})"


def complement(m: AxisSet) -> AxisSet:
    """Axes of the ambient space not in ``m``."""
    return m.complement()


def prefix(k: int, ambient: int) -> AxisSet:
    """The leading axes ``(0, ..., k-1)``."""
    return AxisSet(range(k), ambient)


def hadamard_div(a, b) -> np.ndarray:
    """Elementwise ``a / b``, refusing zero denominators."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    zeros = np.argwhere(b == 0)
    if len(zeros):
        raise HadamardDivisionError(zeros[0])
    return a / b


def write_matrix_csv(path, matrix) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    np.savetxt(Path(path), matrix, delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(Path(path), delimiter=",", dtype=float))


def write_tensor4_csv(path, tensor) -> None:
    """One row per element: four integer indices then the value."""
    tensor = np.asarray(tensor, dtype=float)
    if tensor.ndim != 4:
        raise ValueError("expected a rank-4 tensor")
    with open(path, "w") as fh:
        for idx in np.ndindex(*tensor.shape):
            fh.write("%d,%d,%d,%d,%.17g\n" % (*idx, tensor[idx]))


def read_tensor4_csv(path) -> np.ndarray:
    raw = np.atleast_2d(np.loadtxt(Path(path), delimiter=",", dtype=float))
    idx = raw[:, :4].astype(int)
    shape = tuple(idx.max(axis=0) + 1)
    out = np.zeros(shape)
    out[tuple(idx.T)] = raw[:, 4]
    return out
