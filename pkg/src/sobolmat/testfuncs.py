"""Scalar test functions, the nine-output benchmark model, and its noise model.

Every function here takes points in the unit hypercube; the affine maps onto
each function's natural domain happen internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError, ZeroVarianceError

N_OUTPUTS = 9
MIN_INPUTS = 5

A_SMALL_G = np.array([3.0, 6.0, 9.0, 18.0, 27.0])
A_LARGE_G = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
A_OAKLEY = np.array([5.0, 35 / 8, 15 / 4, 25 / 8, 5 / 2])
B_PLUS = np.array(
    [
        [5, 29 / 6, 14 / 3, 9 / 2, 13 / 3],
        [25 / 6, 4, 23 / 6, 11 / 3, 7 / 2],
        [10 / 3, 19 / 6, 3, 17 / 6, 8 / 3],
        [5 / 2, 7 / 3, 13 / 6, 2, 11 / 6],
        [5 / 3, 3 / 2, 4 / 3, 7 / 6, 1],
    ]
)
# B_minus[m, m'] = B_plus[4 - m, 4 - m']
B_MINUS = B_PLUS[::-1, ::-1].copy()


@dataclass(frozen=True)
class IshigamiParams:
    A: float
    B: float


@dataclass(frozen=True)
class SobolGParams:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.broadcast_to(np.asarray(self.A, dtype=float), (5,)).copy()
        B = np.broadcast_to(np.asarray(self.B, dtype=float), (5,)).copy()
        if np.any(A < 0):
            raise ValueError("Sobol' G requires A >= 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class OakleyParams:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.broadcast_to(np.asarray(self.A, dtype=float), (5,)).copy()
        B = np.broadcast_to(np.asarray(self.B, dtype=float), (5, 5)).copy()
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("Oakley parameters must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise-to-signal magnitude ``E`` and the seed of its Gaussian draws."""

    E: float
    seed: int = 0

    def __post_init__(self):
        if not self.E >= 0:
            raise ValueError("noise magnitude E must be >= 0")


COMPONENTS = (
    ("ishigami", IshigamiParams(7.0, 0.1)),
    ("ishigami", IshigamiParams(20.0, 1.0)),
    ("ishigami", IshigamiParams(0.0, 0.0)),
    ("sobol_g", SobolGParams(A_SMALL_G, 2.0)),
    ("sobol_g", SobolGParams(A_LARGE_G, 2.0)),
    ("sobol_g", SobolGParams(A_LARGE_G, 4.0)),
    ("oakley", OakleyParams(A_OAKLEY, np.zeros((5, 5)))),
    ("oakley", OakleyParams(A_OAKLEY, B_PLUS)),
    ("oakley", OakleyParams(-A_OAKLEY, B_MINUS)),
)


def _unit_points(u, width: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] < width:
        raise DomainError(f"need at least {width} input columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("inputs must lie in the unit hypercube")
    return arr, single


def _finish(values: np.ndarray, single: bool):
    return values[0] if single else values


def ishigami(u, p: IshigamiParams = IshigamiParams(7.0, 0.1)):
    """Ishigami function of the first three columns, mapped to ``[-pi, pi]``."""
    arr, single = _unit_points(u, 3)
    x = 2.0 * np.pi * arr[:, :3] - np.pi
    out = (1.0 + p.B * x[:, 2] ** 4) * np.sin(x[:, 0]) + p.A * np.sin(x[:, 1]) ** 2
    return _finish(out, single)


def sobol_g(u, p: SobolGParams = SobolGParams(A_SMALL_G, 2.0)):
    """Modified Sobol' G product of the first five columns."""
    arr, single = _unit_points(u, 5)
    factors = ((1.0 + p.B) * np.abs(2.0 * arr[:, :5] - 1.0) ** p.B + p.A) / (1.0 + p.A)
    return _finish(np.prod(factors, axis=1), single)


def oakley(u, p: OakleyParams = OakleyParams(A_OAKLEY, np.zeros((5, 5)))):
    """Linear plus quadratic form of the first five columns, mapped to ``[-1, 1]``."""
    arr, single = _unit_points(u, 5)
    x = 2.0 * arr[:, :5] - 1.0
    out = x @ p.A + np.einsum("ni,ij,nj->n", x, p.B, x)
    return _finish(out, single)


_DISPATCH = {"ishigami": ishigami, "sobol_g": sobol_g, "oakley": oakley}


def mnu9(u) -> np.ndarray:
    """The nine-output benchmark model.  Only columns 0-4 are read.

    Accepts a single point (returns shape ``(9,)``) or a ``(P, M)`` batch
    (returns ``(P, 9)``) with ``M >= 5``.
    """
    arr, single = _unit_points(u, MIN_INPUTS)
    out = np.column_stack([_DISPATCH[name](arr, p) for name, p in COMPONENTS])
    return out[0] if single else out


def standardize(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shift and scale each output column to sample mean 0 and sample sd 1.

    The sample standard deviation uses ``ddof=1``.  Returns the standardized
    array together with the per-output means and standard deviations.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise ValueError("standardization needs at least two samples")
    mean = y.mean(axis=0)
    sd = y.std(axis=0, ddof=1)
    for l, s in enumerate(sd):
        if not s > 0:
            raise ZeroVarianceError(l)
    return (y - mean) / sd, mean, sd


def noise_draws(n_samples: int, n_outputs: int, seed: int) -> np.ndarray:
    """Standard Gaussian draws, one Philox stream per output column.

    Stream ``l`` is keyed by ``(seed, l)`` and sample ``n`` takes the ``n``-th
    draw of that stream, so the value at ``(n, l)`` depends only on the seed
    and its coordinates, never on how many outputs or samples are requested
    after it.
    """
    cols = []
    for l in range(n_outputs):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(l,))
        cols.append(np.random.Generator(np.random.Philox(ss)).standard_normal(n_samples))
    return np.column_stack(cols) if cols else np.empty((n_samples, 0))


def add_noise(standardized, spec: NoiseSpec) -> np.ndarray:
    """Mix standardized outputs with iid Gaussian noise of magnitude ``E``.

    ``y = (f + E e) / sqrt(1 + E^2)``, which keeps unit variance.
    """
    f = np.asarray(standardized, dtype=float)
    if spec.E == 0:
        return f.copy()
    e = noise_draws(f.shape[0], f.shape[1], spec.seed)
    return (f + spec.E * e) / np.sqrt(1.0 + spec.E**2)


class OutputStandardizer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Per-column standardization as a transformer, for use in pipelines."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        _, self.mean_, self.scale_ = standardize(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        return X * self.scale_ + self.mean_


# Closed Sobol' matrices of mnu9 for the leading axes (0..k-1), k = 1..5,
# as published to three decimals.  Any M >= 5 shares TRUTH_TABLES[5].
_S5 = [
    [1.000, 0.896, 0.560, -0.073, -0.078, -0.131, 0.254, 0.125, -0.159],
    [0.896, 1.000, 0.593, -0.032, -0.034, -0.057, 0.268, 0.146, -0.161],
    [0.560, 0.593, 1.000, 0.000, 0.000, 0.000, 0.453, 0.264, -0.264],
    [-0.073, -0.032, 0.000, 1.000, 0.944, 0.825, 0.000, 0.251, 0.136],
    [-0.078, -0.034, 0.000, 0.944, 1.000, 0.926, 0.000, 0.232, 0.137],
    [-0.131, -0.057, 0.000, 0.825, 0.926, 1.000, 0.000, 0.197, 0.116],
    [0.254, 0.268, 0.453, 0.000, 0.000, 0.000, 1.000, 0.582, -0.582],
    [0.125, 0.146, 0.264, 0.251, 0.232, 0.197, 0.582, 1.000, 0.206],
    [-0.159, -0.161, -0.264, 0.136, 0.137, 0.116, -0.582, 0.206, 1.000],
]
_S4 = [
    [1.000, 0.896, 0.560, -0.073, -0.078, -0.131, 0.254, 0.125, -0.159],
    [0.896, 1.000, 0.593, -0.032, -0.034, -0.057, 0.268, 0.146, -0.161],
    [0.560, 0.593, 1.000, 0.000, 0.000, 0.000, 0.453, 0.264, -0.264],
    [-0.073, -0.032, 0.000, 0.986, 0.929, 0.811, 0.000, 0.247, 0.116],
    [-0.078, -0.034, 0.000, 0.929, 0.979, 0.904, 0.000, 0.229, 0.118],
    [-0.131, -0.057, 0.000, 0.811, 0.904, 0.970, 0.000, 0.194, 0.100],
    [0.254, 0.268, 0.453, 0.000, 0.000, 0.000, 0.916, 0.533, -0.533],
    [0.125, 0.146, 0.264, 0.247, 0.229, 0.194, 0.533, 0.839, 0.031],
    [-0.159, -0.161, -0.264, 0.116, 0.118, 0.100, -0.533, 0.031, 0.591],
]
_S3 = [
    [1.000, 0.896, 0.560, -0.073, -0.078, -0.131, 0.254, 0.125, -0.159],
    [0.896, 1.000, 0.593, -0.032, -0.034, -0.057, 0.268, 0.146, -0.161],
    [0.560, 0.593, 1.000, 0.000, 0.000, 0.000, 0.453, 0.264, -0.264],
    [-0.073, -0.032, 0.000, 0.956, 0.889, 0.774, 0.000, 0.235, 0.093],
    [-0.078, -0.034, 0.000, 0.889, 0.912, 0.833, 0.000, 0.215, 0.091],
    [-0.131, -0.057, 0.000, 0.774, 0.833, 0.877, 0.000, 0.183, 0.077],
    [0.254, 0.268, 0.453, 0.000, 0.000, 0.000, 0.784, 0.457, -0.457],
    [0.125, 0.146, 0.264, 0.235, 0.215, 0.183, 0.457, 0.622, -0.096],
    [-0.159, -0.161, -0.264, 0.093, 0.091, 0.077, -0.457, -0.096, 0.359],
]
_S2 = [
    [0.756, 0.525, 0.560, -0.073, -0.078, -0.131, 0.254, 0.125, -0.159],
    [0.525, 0.435, 0.593, -0.032, -0.034, -0.057, 0.268, 0.146, -0.161],
    [0.560, 0.593, 1.000, 0.000, 0.000, 0.000, 0.453, 0.264, -0.264],
    [-0.073, -0.032, 0.000, 0.848, 0.765, 0.661, 0.000, 0.202, 0.059],
    [-0.078, -0.034, 0.000, 0.765, 0.741, 0.660, 0.000, 0.181, 0.057],
    [-0.131, -0.057, 0.000, 0.661, 0.660, 0.664, 0.000, 0.154, 0.048],
    [0.254, 0.268, 0.453, 0.000, 0.000, 0.000, 0.595, 0.346, -0.346],
    [0.125, 0.146, 0.264, 0.202, 0.181, 0.154, 0.346, 0.375, -0.145],
    [-0.159, -0.161, -0.264, 0.059, 0.057, 0.048, -0.346, -0.145, 0.221],
]
_S1 = [
    [0.314, 0.332, 0.560, 0.000, 0.000, 0.000, 0.254, 0.148, -0.148],
    [0.332, 0.351, 0.593, 0.000, 0.000, 0.000, 0.268, 0.156, -0.156],
    [0.560, 0.593, 1.000, 0.000, 0.000, 0.000, 0.453, 0.264, -0.264],
    [0.000, 0.000, 0.000, 0.632, 0.515, 0.438, 0.000, 0.139, 0.028],
    [0.000, 0.000, 0.000, 0.515, 0.420, 0.357, 0.000, 0.113, 0.023],
    [0.000, 0.000, 0.000, 0.438, 0.357, 0.331, 0.000, 0.096, 0.019],
    [0.254, 0.268, 0.453, 0.000, 0.000, 0.000, 0.337, 0.196, -0.196],
    [0.148, 0.156, 0.264, 0.139, 0.113, 0.096, 0.196, 0.145, -0.108],
    [-0.148, -0.156, -0.264, 0.028, 0.023, 0.019, -0.196, -0.108, 0.115],
]
TRUTH_TABLES = {k: np.array(t) for k, t in zip((5, 4, 3, 2, 1), (_S5, _S4, _S3, _S2, _S1))}
for _t in TRUTH_TABLES.values():
    _t.setflags(write=False)


def truth_table(k: int) -> np.ndarray:
    """Published closed Sobol' matrix of mnu9 over the leading ``k`` axes."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.zeros((N_OUTPUTS, N_OUTPUTS))
    return TRUTH_TABLES[min(k, 5)].copy()
