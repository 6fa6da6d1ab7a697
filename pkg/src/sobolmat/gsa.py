"""Sobol' matrices, their Taylor standard errors, and a sampling oracle.

For a subset ``m`` of input axes the closed Sobol' matrix is

    S_m = V_m / (D (x) D),   V_m = E_m[(mu_m - mu_0) (x) (mu_m - mu_0)],

with ``D = sqrt(diag V_M)``.  Its diagonal holds the ordinary closed Sobol'
indices; off-diagonal entries measure how much of the correlation between two
outputs the retained inputs explain.  ``T_m`` estimates the standard error of
``S_m`` induced by surrogate uncertainty.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .axes import AxisSet, hadamard_div, prefix
from .exceptions import NegativeQError, ZeroVarianceError
from .moments import ErrorTerms, MomentEngine, gauss_legendre
from .surrogate import GaussianProcessSurrogate

log = logging.getLogger(__name__)

__all__ = [
    "SobolReport",
    "SobolMatrices",
    "closed_sobol_matrix",
    "total_sobol_matrix",
    "sobol_error",
    "total_sobol_error",
    "q_matrix",
    "compute_reports",
    "first_order_matrix",
    "scalar_sobol_index",
    "r_squared_index",
    "oracle_sobol_matrix",
    "oracle_sobol_matrices",
    "filter_reports",
    "FilterResult",
    "seminorm",
]

FILTER_WINDOW = (-0.001, 1.001)
_Q_CLAMP = 1e-3


@dataclass
class SobolReport:
    """Everything computed for one retained-axis subset ``m``."""

    m: AxisSet
    S: np.ndarray
    S_total: np.ndarray
    V: np.ndarray
    D: np.ndarray
    T: np.ndarray | None = None
    T_total: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_outputs(self) -> int:
        return self.S.shape[0]


# ---------------------------------------------------------------------------
# matrices from moments


def closed_sobol_matrix(V_m, D_M) -> np.ndarray:
    """``V_m / (D_M (x) D_M)``; a zero in ``D_M`` raises :class:`HadamardDivisionError`."""
    V_m = np.asarray(V_m, dtype=float)
    D_M = np.asarray(D_M, dtype=float)
    return hadamard_div(V_m, np.outer(D_M, D_M))


def total_sobol_matrix(S_M, S_m) -> np.ndarray:
    """Total Sobol' matrix of the axes dropped from ``m``: ``S_M - S_m``."""
    S_M = np.asarray(S_M, dtype=float)
    S_m = np.asarray(S_m, dtype=float)
    if S_M.shape != S_m.shape:
        raise ValueError(f"shape mismatch {S_M.shape} vs {S_m.shape}")
    return S_M - S_m


def _q_parts(terms: ErrorTerms, V_m, D_M):
    V = np.asarray(V_m, dtype=float)
    D2 = np.asarray(D_M, dtype=float) ** 2
    rows, cols = D2[:, None], D2[None, :]
    dd = np.diag(terms.w_MM)
    quad = (
        dd[:, None] / rows**2
        + terms.w_MM / (rows * cols)
        + terms.w_MM.T / (rows * cols)
        + dd[None, :] / cols**2
    )
    lin = terms.w_mM[..., 0] / rows + terms.w_mM[..., 1] / cols
    return terms.w_mm, -V * lin, 0.25 * V * V * quad


def q_matrix(terms: ErrorTerms, V_m, D_M) -> np.ndarray:
    """First-order (delta method) variance of ``V_m[l,l'] / (D_l D_l')``, times ``D_l^2 D_l'^2``."""
    return sum(_q_parts(terms, V_m, D_M))


def sobol_error(terms: ErrorTerms, V_m, D_M, strict: bool = True) -> np.ndarray:
    """Taylor-series standard error ``T_m = sqrt(Q) / (D_l D_l')``.

    Each ``Q[l, l']`` is a sum of terms that cancel exactly when ``m`` already
    holds every input that outputs ``l`` and ``l'`` depend on.  A negative
    entry smaller than ``1e-3`` of the summed term magnitudes is rounding and
    is clamped to zero.  Anything more negative raises
    :class:`NegativeQError`, or becomes NaN when ``strict`` is false.
    """
    parts = _q_parts(terms, V_m, D_M)
    Q = sum(parts)
    scale = sum(np.abs(p) for p in parts)
    bad = Q < -_Q_CLAMP * scale
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        if strict:
            raise NegativeQError(idx, float(Q[idx]))
        log.warning("negative Q at %s for subset %s", idx, terms.m.label())
    Q = np.where(bad, np.nan, np.maximum(Q, 0.0))
    D = np.asarray(D_M, dtype=float)
    T = np.sqrt(Q) / np.outer(D, D)
    if terms.m.is_full:
        np.fill_diagonal(T, 0.0)
    return T


def total_sobol_error(T_M, T_m) -> np.ndarray:
    """Conservative error of the total matrix: ``T_M + T_m``."""
    return np.asarray(T_M, dtype=float) + np.asarray(T_m, dtype=float)


def compute_reports(
    surrogate,
    subsets: Iterable,
    compute_errors: bool = True,
    method: str = "quadrature",
    kernel_shift: float = 0.0,
    strict: bool = False,
    engine: MomentEngine | None = None,
) -> list[SobolReport]:
    """Sobol' matrices (and optionally their errors) of a fitted surrogate.

    Parameters
    ----------
    surrogate : GaussianProcessSurrogate
        Fitted surrogate.
    subsets : iterable
        Retained-axis subsets, as :class:`AxisSet` or integer sequences.
    compute_errors : bool
        Also compute ``T`` and ``T_total``.  This is the expensive part.
    method : {"quadrature", "closed"}
        Integration backend, see :class:`MomentEngine`.
    kernel_shift : float
        Constant added to the posterior kernel (must not change any output).
    strict : bool
        Raise on a materially negative ``Q`` instead of writing NaN.
    """
    if engine is None:
        engine = MomentEngine(surrogate, method=method, kernel_shift=kernel_shift)
    M = engine.n_inputs
    subsets = [AxisSet.coerce(m, M) for m in subsets]
    full = AxisSet.full(M)
    work = list(dict.fromkeys(subsets + [full]))
    variances = dict(zip(work, engine.marginal_variances(work)))
    V_M = variances[full]
    diag = np.diag(V_M)
    for l, v in enumerate(diag):
        if not v > 0:
            raise ZeroVarianceError(l)
    D = np.sqrt(diag)
    S_M = closed_sobol_matrix(V_M, D)
    np.fill_diagonal(S_M, 1.0)
    terms = dict(zip(work, engine.error_terms(work))) if compute_errors else {}
    T_M = sobol_error(terms[full], V_M, D, strict) if compute_errors else None
    base_diag = {
        "method": engine.method,
        "quadrature_order": engine.order,
        "quadrature_panels": engine.panels,
        "mean0": engine.mean0.tolist(),
    }
    if compute_errors:
        w_MM = np.diag(terms[full].w_MM)
        base_diag["taylor_ratio"] = (np.sqrt(np.maximum(w_MM, 0.0)) / diag).tolist()
    reports = []
    for m in subsets:
        V = variances[m]
        S = np.zeros_like(V_M) if m.is_empty else closed_sobol_matrix(V, D)
        if m.is_full:
            S = S_M.copy()
        diagnostics = dict(base_diag)
        T = T_tot = None
        if compute_errors:
            T = sobol_error(terms[m], V, D, strict)
            T_tot = total_sobol_error(T_M, T)
            diagnostics["nonfinite_T"] = int(np.sum(~np.isfinite(T)))
        reports.append(SobolReport(m, S, total_sobol_matrix(S_M, S), V, D, T, T_tot, diagnostics))
    return reports


def first_order_matrix(s, axis: int, **engine_kwargs) -> np.ndarray:
    """Closed Sobol' matrix of a single input axis."""
    M = s.n_features_in_
    if not 0 <= axis < M:
        raise ValueError(f"axis {axis} outside [0, {M})")
    return compute_reports(s, [AxisSet((axis,), M)], compute_errors=False, **engine_kwargs)[0].S


# ---------------------------------------------------------------------------
# independent scalar paths used as cross-checks


def scalar_sobol_index(s, m, output: int, max_points: int = 2_000_000) -> float:
    """Closed Sobol' index of one output by direct quadrature of ``mu_m^2``.

    This evaluates ``E_m[mu_m^2]`` on the tensor Gauss-Legendre grid over the
    retained axes rather than through training-point algebra, so it is an
    independent check on the matrix diagonal.  Only practical for few axes.
    """
    engine = MomentEngine(s)
    M = engine.n_inputs

    def second_moment(sub: AxisSet) -> tuple[float, float]:
        if sub.is_empty:
            mu = engine.marginal_mean(sub, np.zeros((1, 0)))[0, output]
            return mu, mu * mu
        n_grid = len(engine.nodes) ** len(sub)
        if n_grid > max_points:
            raise ValueError(f"{n_grid} grid points exceeds max_points={max_points}")
        pts = np.array(list(itertools.product(engine.nodes, repeat=len(sub))))
        wts = np.prod(np.array(list(itertools.product(engine.weights, repeat=len(sub)))), axis=1)
        mu = engine.marginal_mean(sub, pts)[:, output]
        return float(wts @ mu), float(wts @ (mu * mu))

    m = AxisSet.coerce(m, M)
    mean_m, sq_m = second_moment(m)
    mean_M, sq_M = second_moment(AxisSet.full(M))
    return (sq_m - mean_m**2) / (sq_M - mean_M**2)


def r_squared_index(s, m, n_points: int = 2**14, seed: int = 0) -> np.ndarray:
    """Squared correlation between ``mu_m`` and ``mu_M`` per output, by quasi-MC."""
    engine = MomentEngine(s)
    M = engine.n_inputs
    m = AxisSet.coerce(m, M)
    u = qmc.Sobol(M, scramble=True, seed=seed).random(n_points)
    full = np.asarray(s.predict(u), dtype=float).reshape(n_points, -1)
    if m.is_empty:
        return np.zeros(full.shape[1])
    reduced = engine.marginal_mean(m, u[:, list(m.axes)])
    fc = full - full.mean(axis=0)
    rc = reduced - reduced.mean(axis=0)
    cov = (fc * rc).sum(axis=0)
    return cov**2 / ((fc * fc).sum(axis=0) * (rc * rc).sum(axis=0))


# ---------------------------------------------------------------------------
# oracle


def _check_variance(values: np.ndarray) -> None:
    var = values.var(axis=0)
    for l, v in enumerate(var):
        if not v > 0:
            raise ZeroVarianceError(l)


def oracle_sobol_matrices(
    f: Callable[[np.ndarray], np.ndarray],
    subsets: Sequence,
    ambient: int,
    n_points: int = 2**16,
    seed: int = 0,
    method: str = "qmc",
    order: int = 32,
) -> list[np.ndarray]:
    """Sobol' matrices of a deterministic function, estimated without a surrogate.

    ``method="qmc"`` uses a symmetrized pick-freeze estimator on a scrambled
    Sobol' sequence of ``n_points`` base points (``2 * ambient`` dimensions).
    For each subset, ``V_m[l,l']`` is estimated from pairs of evaluations that
    share the retained coordinates and differ in the rest, symmetrized over
    which sample supplies the fresh complement and over ``(l, l')``.

    ``method="quadrature"`` uses a tensor Gauss-Legendre rule of ``order``
    points per axis for both the inner and outer expectations; it is exact for
    polynomials of modest degree and meant for ``ambient <= 3``.
    """
    subsets = [AxisSet.coerce(m, ambient) for m in subsets]
    if method == "qmc":
        return _oracle_qmc(f, subsets, ambient, n_points, seed)
    if method == "quadrature":
        return _oracle_quadrature(f, subsets, ambient, order)
    raise ValueError(f"unknown oracle method {method!r}")


def oracle_sobol_matrix(f, m, n_points: int = 2**16, seed: int = 0, ambient=None, **kwargs):
    """Single-subset convenience wrapper around :func:`oracle_sobol_matrices`."""
    if ambient is None:
        if not isinstance(m, AxisSet):
            raise ValueError("ambient dimension required when m is not an AxisSet")
        ambient = m.ambient
    return oracle_sobol_matrices(f, [m], ambient, n_points, seed, **kwargs)[0]


def _evaluate(f, u) -> np.ndarray:
    out = np.asarray(f(u), dtype=float)
    return out.reshape(len(u), -1)


def _oracle_qmc(f, subsets, M, n_points, seed):
    if n_points < 2:
        raise ValueError("need at least two points")
    base = qmc.Sobol(2 * M, scramble=True, seed=seed).random(n_points)
    A, B = base[:, :M], base[:, M:]
    fA, fB = _evaluate(f, A), _evaluate(f, B)
    _check_variance(np.vstack([fA, fB]))
    D = np.sqrt(0.5 * (fA.var(axis=0, ddof=1) + fB.var(axis=0, ddof=1)))
    out = []
    for m in subsets:
        if m.is_empty:
            out.append(np.zeros((fA.shape[1],) * 2))
            continue
        keep = list(m.axes)
        AB = B.copy()
        AB[:, keep] = A[:, keep]
        BA = A.copy()
        BA[:, keep] = B[:, keep]
        fAB, fBA = _evaluate(f, AB), _evaluate(f, BA)
        V = (fA.T @ (fAB - fB) + fB.T @ (fBA - fA)) / (2 * n_points)
        V = 0.5 * (V + V.T)
        out.append(closed_sobol_matrix(V, D))
    return out


def _oracle_quadrature(f, subsets, M, order):
    nodes, weights = gauss_legendre(order)
    q = len(nodes)
    grid = np.array(list(itertools.product(nodes, repeat=M)))
    vals = _evaluate(f, grid).reshape((q,) * M + (-1,))
    w_axes = [weights] * M

    def expect(arr, axes):
        for j in sorted(axes, reverse=True):
            arr = np.tensordot(arr, w_axes[j], axes=([j], [0]))
        return arr

    mean = expect(vals, range(M))
    centred = vals - mean
    L = centred.shape[-1]
    flat = centred.reshape(-1, L)
    w_full = np.prod(np.array(list(itertools.product(weights, repeat=M))), axis=1)
    V_M = flat.T @ (flat * w_full[:, None])
    D = np.sqrt(np.diag(V_M))
    for l, d in enumerate(D):
        if not d > 0:
            raise ZeroVarianceError(l)
    out = []
    for m in subsets:
        drop = [j for j in range(M) if j not in m]
        reduced = expect(centred, drop)  # axes of m remain, in order, then outputs
        red = reduced.reshape(-1, L)
        w_m = (
            np.prod(np.array(list(itertools.product(weights, repeat=len(m)))), axis=1)
            if len(m)
            else np.ones(1)
        )
        V = red.T @ (red * w_m[:, None])
        out.append(closed_sobol_matrix(0.5 * (V + V.T), D))
    return out


# ---------------------------------------------------------------------------
# filtering and summaries


@dataclass
class FilterResult:
    """Outputs removed from one fold, with the first offending value for each."""

    removed: list[int]
    reasons: dict[int, str]

    def kept(self, n_outputs: int) -> np.ndarray:
        mask = np.ones(n_outputs, dtype=bool)
        mask[self.removed] = False
        return mask


def filter_reports(reports: Sequence[SobolReport], window=FILTER_WINDOW) -> FilterResult:
    """Flag outputs whose results are numerically impossible.

    Any ``S_m[l, l]`` or ``T_m[l, l']`` outside ``window`` (or non-finite)
    removes output ``l`` (and ``l'``) from every report of the fold.
    """
    lo, hi = window
    reasons: dict[int, str] = {}

    def flag(ls, text):
        for l in ls:
            reasons.setdefault(int(l), text)

    for rep in reports:
        d = np.diag(rep.S)
        for l in np.flatnonzero(~((d >= lo) & (d <= hi))):
            flag([l], f"S[{l},{l}]={d[l]:.6g} for m={rep.m.label()}")
        if rep.T is not None:
            bad = ~((rep.T >= lo) & (rep.T <= hi))
            for l, lp in np.argwhere(bad):
                flag([l, lp], f"T[{l},{lp}]={rep.T[l, lp]:.6g} for m={rep.m.label()}")
    return FilterResult(sorted(reasons), reasons)


def seminorm(matrix, selector=None, kind: str = "det") -> float:
    """Scalar summary of a (sub)matrix: its determinant or largest absolute entry."""
    mat = np.asarray(matrix, dtype=float)
    if selector is not None:
        idx = np.asarray(selector)
        mat = mat[np.ix_(idx, idx)]
    if kind == "det":
        return float(np.linalg.det(mat))
    if kind == "maxabs":
        return float(np.max(np.abs(mat)))
    raise ValueError(f"unknown seminorm {kind!r}")


# ---------------------------------------------------------------------------
# estimator


class SobolMatrices(BaseEstimator):
    """Fit a surrogate to data and compute Sobol' matrices of it.

    Parameters
    ----------
    subsets : list of sequences of int, optional
        Retained-axis subsets.  Defaults to the leading-axis family
        ``(0,), (0, 1), ..., (0, ..., M-1)``.
    compute_errors : bool
        Also compute Taylor standard errors.
    method : {"quadrature", "closed"}
        Integration backend.
    surrogate : estimator, optional
        Unfitted surrogate to clone; defaults to ``GaussianProcessSurrogate()``.

    Attributes
    ----------
    surrogate_ : GaussianProcessSurrogate
    reports_ : list of SobolReport
    S_, S_total_, V_ : ndarray of shape (n_subsets, L, L)
    T_, T_total_ : ndarray of shape (n_subsets, L, L) or None
    D_ : ndarray of shape (L,)
    """

    def __init__(self, subsets=None, compute_errors=True, method="quadrature", surrogate=None):
        self.subsets = subsets
        self.compute_errors = compute_errors
        self.method = method
        self.surrogate = surrogate

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2)
        if np.any(X < 0) or np.any(X > 1):
            raise ValueError("inputs must lie in the unit hypercube")
        base = GaussianProcessSurrogate() if self.surrogate is None else clone(self.surrogate)
        return self.fit_surrogate(base.fit(X, y))

    def fit_surrogate(self, surrogate):
        """Compute reports for an already fitted surrogate."""
        M = surrogate.n_features_in_
        subsets = (
            [prefix(k, M) for k in range(1, M + 1)]
            if self.subsets is None
            else [AxisSet.coerce(m, M) for m in self.subsets]
        )
        self.surrogate_ = surrogate
        self.n_features_in_ = M
        self.reports_ = compute_reports(
            surrogate, subsets, compute_errors=self.compute_errors, method=self.method
        )
        # the full set is always appended, so read the order back from the reports
        self.subsets_ = [r.m for r in self.reports_]
        self.S_ = np.stack([r.S for r in self.reports_])
        self.S_total_ = np.stack([r.S_total for r in self.reports_])
        self.V_ = np.stack([r.V for r in self.reports_])
        self.D_ = self.reports_[0].D
        if self.compute_errors:
            self.T_ = np.stack([r.T for r in self.reports_])
            self.T_total_ = np.stack([r.T_total for r in self.reports_])
        else:
            self.T_ = self.T_total_ = None
        return self

    def report(self, m) -> SobolReport:
        check_is_fitted(self, "reports_")
        m = AxisSet.coerce(m, self.n_features_in_)
        for rep in self.reports_:
            if rep.m == m:
                return rep
        raise KeyError(f"subset {m.label()} was not computed")
