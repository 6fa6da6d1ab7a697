"""Moments of a fitted Gaussian-process surrogate marginalized over uniform inputs.

Everything here is an exact integral of the surrogate against the uniform
measure on ``[0, 1]^M``.  Because the RBF kernel factorizes across axes, every
multi-dimensional integral is a product of one-dimensional integrals attached
to training points.  Two backends evaluate those 1D integrals:

``"quadrature"`` (default)
    Composite Gauss-Legendre rules.  All moments are then exact expectations
    under one discrete product measure, so Jensen-type inequalities (variance
    monotonicity, Cauchy-Schwarz) hold to rounding error.
``"closed"``
    Error-function expressions wherever a closed form exists; the remaining
    outer integrals fall back to the same Gauss-Legendre rule.

Notation used in comments: ``phi_a(u; x) = exp(-(u - x)^2 / 2 ell_a^2)`` is
one axis of output ``a``'s correlation function, ``r_b(u, u')`` the same thing
between two free points, ``w_a = s2_a * alpha_a`` the mean weights, so that the
posterior mean is ``mu_a(u) = sum_n w_an prod_j phi_a(u_j; x_nj)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import erf

from .axes import AxisSet
from .exceptions import IntegrationFailure

__all__ = [
    "MomentEngine",
    "ErrorTerms",
    "gauss_legendre",
    "auto_panels",
    "box_gaussian_integral",
    "box_double_integral",
    "marginal_mean",
    "marginal_variance",
    "marginal_second_moment",
    "covariance_of_variances",
    "error_terms_from_tensors",
]

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_MAX_PANELS = 512
_MODE_TOL = 1e-14
_BASIS_TOL = 1e-15
# largest Khatri-Rao block (rows x training points) built for projected variances
_MAX_BLOCK = 60_000_000


def gauss_legendre(order: int = 32, panels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if order < 1 or panels < 1:
        raise ValueError("order and panels must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * (x + 1.0) / 2.0).ravel()
    weights = (h[:, None] * w / 2.0).ravel()
    return nodes, weights


def auto_panels(min_lengthscale: float) -> int:
    """Panels per axis so that a 32-point rule resolves Gaussians of this width.

    Gaussian products of width ``ell / sqrt(2)`` integrate to near machine
    precision once each panel spans at most about eight lengthscales.
    """
    if not min_lengthscale > 0:
        raise ValueError("lengthscale must be positive")
    panels = math.ceil(0.125 / min_lengthscale)
    if panels > _MAX_PANELS:
        raise IntegrationFailure(
            f"lengthscale {min_lengthscale:g} needs {panels} panels (limit {_MAX_PANELS})"
        )
    return max(1, panels)


def box_gaussian_integral(c, v):
    """``int_0^1 exp(-(u - c)^2 / (2 v^2)) du`` in closed form."""
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    s = math.sqrt(2.0) * v
    return _SQRT_HALF_PI * v * (erf((1.0 - c) / s) + erf(c / s))


def box_double_integral(ell):
    """``int_0^1 int_0^1 exp(-(u - u')^2 / (2 ell^2)) du du'`` in closed form."""
    ell = np.asarray(ell, dtype=float)
    return 2.0 * (
        _SQRT_HALF_PI * ell * erf(1.0 / (math.sqrt(2.0) * ell))
        + ell**2 * np.expm1(-0.5 / ell**2)
    )


def _gauss_pair(x, s, y, t):
    """``int_0^1 exp(-(u-x)^2/2s^2) exp(-(u-y)^2/2t^2) du`` (broadcasting x, y)."""
    s2, t2 = s * s, t * t
    tot = s2 + t2
    centre = (x * t2 + y * s2) / tot
    width = math.sqrt(s2 * t2 / tot)
    return np.exp(-0.5 * (x - y) ** 2 / tot) * box_gaussian_integral(centre, width)


@dataclass
class ErrorTerms:
    """The slices of the covariance-of-variances tensors that enter ``Q``.

    ``w_mm[l, l'] = W_mm[l, l', l, l']``; ``w_mM[l, l', 0] = W_mM[l, l', l, l]``
    and ``w_mM[l, l', 1] = W_mM[l, l', l', l']``; ``w_MM[l, l'] = W_MM[l, l, l', l']``.
    """

    m: AxisSet
    w_mm: np.ndarray
    w_mM: np.ndarray
    w_MM: np.ndarray


def error_terms_from_tensors(m: AxisSet, W_mm, W_mM, W_MM) -> ErrorTerms:
    """Slice full rank-4 tensors into :class:`ErrorTerms`."""
    L = W_mm.shape[0]
    idx = np.arange(L)
    a, b = np.meshgrid(idx, idx, indexing="ij")
    w_mM = np.stack([W_mM[a, b, a, a], W_mM[a, b, b, b]], axis=-1)
    return ErrorTerms(m, W_mm[a, b, a, b].copy(), w_mM, W_MM[a, a, b, b].copy())


class MomentEngine:
    """Marginalized moments of one fitted surrogate.

    Parameters
    ----------
    surrogate : GaussianProcessSurrogate
        A fitted estimator exposing ``X_train_``, ``params_``, ``chol_`` and
        ``dual_weights_``.
    method : {"quadrature", "closed"}
        Backend for the one-dimensional integrals.
    order : int
        Gauss-Legendre points per panel.
    panels : int, optional
        Panels per axis; chosen from the smallest lengthscale when omitted.
    kernel_shift : float
        Constant added to the posterior kernel.  It models homoskedastic noise
        common to full and reduced models and must not change any Sobol'
        matrix or its error; it is exposed so that claim can be tested.
    """

    def __init__(self, surrogate, method="quadrature", order=32, panels=None, kernel_shift=0.0):
        if method not in ("quadrature", "closed"):
            raise ValueError(f"unknown integration method {method!r}")
        self.surrogate = surrogate
        self.method = method
        self.order = int(order)
        self.kernel_shift = float(kernel_shift)
        self.X = np.asarray(surrogate.X_train_, dtype=float)
        self.n_train, self.n_inputs = self.X.shape
        params = surrogate.params_
        self.n_outputs = len(params)
        self.ls = np.array([p.lengthscales for p in params])  # (L, M)
        self.s2 = np.array([p.signal_variance for p in params])
        self.w = self.s2[:, None] * np.asarray(surrogate.dual_weights_, dtype=float)
        self.chol = surrogate.chol_
        if panels is None:
            panels = auto_panels(float(self.ls.min()))
        self.panels = int(panels)
        self.nodes, self.weights = gauss_legendre(self.order, self.panels)
        self._mode_cache: dict = {}
        self._cache: dict = {}

    # ------------------------------------------------------------------
    # one-dimensional building blocks

    def _phi_nodes(self, a: int, j: int) -> np.ndarray:
        """``phi_a(u_q; x_nj)`` at the quadrature nodes, shape ``(Q, N)``."""
        d = self.nodes[:, None] - self.X[None, :, j]
        return np.exp(-0.5 * d * d / self.ls[a, j] ** 2)

    def _r_nodes(self, b: int, j: int) -> np.ndarray:
        d = self.nodes[:, None] - self.nodes[None, :]
        return np.exp(-0.5 * d * d / self.ls[b, j] ** 2)

    @cached_property
    def I(self) -> np.ndarray:
        """``int phi_a(u; x_nj) du`` with shape ``(L, M, N)``."""
        out = np.empty((self.n_outputs, self.n_inputs, self.n_train))
        for a in range(self.n_outputs):
            for j in range(self.n_inputs):
                if self.method == "closed":
                    out[a, j] = box_gaussian_integral(self.X[:, j], self.ls[a, j])
                else:
                    out[a, j] = self.weights @ self._phi_nodes(a, j)
        return out

    @cached_property
    def RR(self) -> np.ndarray:
        """``int int r_b(u, u') du du'`` with shape ``(L, M)``."""
        if self.method == "closed":
            return box_double_integral(self.ls)
        out = np.empty((self.n_outputs, self.n_inputs))
        for b in range(self.n_outputs):
            for j in range(self.n_inputs):
                out[b, j] = self.weights @ self._r_nodes(b, j) @ self.weights
        return out

    def R_at(self, b: int, j: int, u) -> np.ndarray:
        """``int r_b(u, u') du'`` evaluated at arbitrary points ``u``."""
        u = np.asarray(u, dtype=float)
        if self.method == "closed":
            return box_gaussian_integral(u, self.ls[b, j])
        d = u[..., None] - self.nodes
        return np.exp(-0.5 * d * d / self.ls[b, j] ** 2) @ self.weights

    def G(self, a: int, b: int, j: int) -> np.ndarray:
        """``int phi_a(u; x_nj) phi_b(u; x_pj) du`` with shape ``(N, N)``."""
        if self.method == "closed":
            x = self.X[:, j]
            return _gauss_pair(x[:, None], self.ls[a, j], x[None, :], self.ls[b, j])
        Pa = self._phi_nodes(a, j)
        Pb = Pa if a == b else self._phi_nodes(b, j)
        return (Pa * self.weights[:, None]).T @ Pb

    def H(self, a: int, b: int, j: int) -> np.ndarray:
        """``int phi_a(u; x_nj) R_b(u) du`` with shape ``(N,)``."""
        return self._phi_nodes(a, j).T @ (self.weights * self.R_at(b, j, self.nodes))

    # ------------------------------------------------------------------
    # first and second moments

    def _axes(self, m) -> AxisSet:
        return AxisSet.coerce(m, self.n_inputs)

    def _rest_product(self, a: int, m: AxisSet) -> np.ndarray:
        """``prod_{j not in m} I_a[j]`` as an ``(N,)`` vector."""
        rest = [j for j in range(self.n_inputs) if j not in m]
        if not rest:
            return np.ones(self.n_train)
        return np.prod(self.I[a, rest], axis=0)

    @cached_property
    def mean0(self) -> np.ndarray:
        """Fully marginalized mean ``mu_0`` per output."""
        empty = AxisSet.empty(self.n_inputs)
        return np.array([self.w[a] @ self._rest_product(a, empty) for a in range(self.n_outputs)])

    def marginal_mean(self, m, u_m) -> np.ndarray:
        """``mu_m(u_m)``: the surrogate mean averaged over the axes outside ``m``.

        ``u_m`` has one column per axis of ``m`` (in sorted order); returns ``(P, L)``.
        """
        m = self._axes(m)
        u_m = np.atleast_2d(np.asarray(u_m, dtype=float))
        if m.is_empty:
            n_points = max(u_m.shape[0], 1)
            return np.tile(self.mean0, (n_points, 1))
        if u_m.shape[1] != len(m):
            raise ValueError(f"expected {len(m)} columns for axes {m.axes}, got {u_m.shape[1]}")
        if np.any(u_m < 0) or np.any(u_m > 1):
            raise ValueError("points must lie in [0, 1]")
        if m.is_full:
            return np.asarray(self.surrogate.predict(u_m), dtype=float).reshape(len(u_m), -1)
        out = np.empty((u_m.shape[0], self.n_outputs))
        for a in range(self.n_outputs):
            feat = np.tile(self._rest_product(a, m), (u_m.shape[0], 1))
            for col, j in enumerate(m):
                d = u_m[:, col, None] - self.X[None, :, j]
                feat *= np.exp(-0.5 * d * d / self.ls[a, j] ** 2)
            out[:, a] = feat @ self.w[a]
        return out

    def marginal_variances(self, subsets) -> list[np.ndarray]:
        """``V_m = E_m[(mu_m - mu_0) (x) (mu_m - mu_0)]`` for each subset, each ``(L, L)``.

        The quadrature backend expands each output's features in an orthonormal
        basis per axis, so every coefficient is a single weighted sum over the
        training points, as stable as a prediction.  The bilinear form
        ``p_a' (G_1 o G_2 o ...) p_b`` used otherwise loses roughly
        ``eps * (sum |w|)^2``, which is large for nearly noise-free fits.
        """
        subsets = [self._axes(m) for m in subsets]
        out = []
        for m in subsets:
            if m.is_empty:
                out.append(np.zeros((self.n_outputs, self.n_outputs)))
            elif self.method == "quadrature" and self._projectable(m):
                out.append(self._projected_variance(m))
            else:
                out.append(self._bilinear_variance(m))
        return out

    def _bilinear_variance(self, m: AxisSet) -> np.ndarray:
        L = self.n_outputs
        V = np.zeros((L, L))
        for a in range(L):
            for b in range(a, L):
                pa = self.w[a] * self._rest_product(a, m)
                pb = self.w[b] * self._rest_product(b, m)
                prod = _hadamard([self.G(a, b, j) for j in m])
                V[a, b] = V[b, a] = pa @ prod @ pb - self.mean0[a] * self.mean0[b]
        return V

    def feature_basis(self, a: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal basis for output ``a``'s features on axis ``j``.

        Returns ``U`` of shape ``(Q, r)``, orthonormal after scaling rows by the
        square-root quadrature weights, and ``C`` of shape ``(r, N)`` with
        ``sqrt(w_q) phi_a(u_q; x_nj) = (U C)[q, n]`` up to ``1e-15`` relative.
        """
        key = ("basis", a, j)
        if key not in self._mode_cache:
            A = np.sqrt(self.weights)[:, None] * self._phi_nodes(a, j)
            U, s, Vt = linalg.svd(A, full_matrices=False, check_finite=False)
            keep = s > _BASIS_TOL * s[0]
            self._mode_cache[key] = (U[:, keep], s[keep, None] * Vt[keep])
        return self._mode_cache[key]

    def _projectable(self, m: AxisSet) -> bool:
        for a in range(self.n_outputs):
            ranks = sorted(self.feature_basis(a, j)[1].shape[0] for j in m)
            if math.prod(ranks[len(ranks) // 2 :]) * self.n_train > _MAX_BLOCK:
                return False
        return True

    def _coefficients(self, a: int, m: AxisSet) -> np.ndarray:
        """Tensor of basis coefficients of ``mu_m[a]``, one axis per retained input."""
        axes = list(m)
        mats = [self.feature_basis(a, j)[1] for j in axes]
        ranks = [c.shape[0] for c in mats]
        # split the axes so both Khatri-Rao blocks have about sqrt(prod(ranks)) rows
        total, acc, cut = math.prod(ranks), 1, 0
        while cut < len(axes) - 1 and acc * ranks[cut] <= math.sqrt(total):
            acc *= ranks[cut]
            cut += 1
        p = self.w[a] * self._rest_product(a, m)
        K1 = _khatri_rao(mats[:cut], self.n_train)
        K2 = _khatri_rao(mats[cut:], self.n_train)
        return ((K1 * p) @ K2.T).reshape(ranks)

    def _projected_variance(self, m: AxisSet) -> np.ndarray:
        L = self.n_outputs
        coefs = [self._coefficients(a, m) for a in range(L)]
        V = np.zeros((L, L))
        for a in range(L):
            for b in range(a, L):
                T = coefs[b]
                if a != b:
                    for i, j in enumerate(m):
                        O = self.feature_basis(a, j)[0].T @ self.feature_basis(b, j)[0]
                        T = np.moveaxis(np.tensordot(O, T, axes=([1], [i])), 0, i)
                V[a, b] = V[b, a] = float(np.sum(coefs[a] * T)) - self.mean0[a] * self.mean0[b]
        return V

    def marginal_variance(self, m) -> np.ndarray:
        return self.marginal_variances([m])[0]

    def _kernel_features(self, b: int, m: AxisSet, u_m: np.ndarray) -> np.ndarray:
        """``k_b`` between marginalized points and training points, ``(P, N)``."""
        feat = np.tile(self.s2[b] * self._rest_product(b, m), (u_m.shape[0], 1))
        for col, j in enumerate(m):
            d = u_m[:, col, None] - self.X[None, :, j]
            feat *= np.exp(-0.5 * d * d / self.ls[b, j] ** 2)
        return feat

    def marginal_second_moment(self, m, m2, u_m, u_m2) -> np.ndarray:
        """Posterior kernel of the reduced models ``y_m`` and ``y_m2``.

        Returns ``(L, P, P')``; the cross-output blocks are zero because outputs
        are modelled independently.
        """
        m, m2 = self._axes(m), self._axes(m2)
        u_m = np.asarray(u_m, dtype=float).reshape(-1, len(m)) if len(m) else np.zeros((1, 0))
        u_m2 = np.asarray(u_m2, dtype=float).reshape(-1, len(m2)) if len(m2) else np.zeros((1, 0))
        if m.is_full and m2.is_full:
            return self.surrogate.posterior_kernel(u_m, u_m2) + self.kernel_shift
        out = np.empty((self.n_outputs, u_m.shape[0], u_m2.shape[0]))
        col = {j: i for i, j in enumerate(m)}
        col2 = {j: i for i, j in enumerate(m2)}
        for b in range(self.n_outputs):
            prior = np.full(out.shape[1:], self.s2[b])
            for j in range(self.n_inputs):
                if j in m and j in m2:
                    d = np.subtract.outer(u_m[:, col[j]], u_m2[:, col2[j]])
                    prior *= np.exp(-0.5 * d * d / self.ls[b, j] ** 2)
                elif j in m:
                    prior *= self.R_at(b, j, u_m[:, col[j]])[:, None]
                elif j in m2:
                    prior *= self.R_at(b, j, u_m2[:, col2[j]])[None, :]
                else:
                    prior *= self.RR[b, j]
            k1 = self._kernel_features(b, m, u_m)
            k2 = self._kernel_features(b, m2, u_m2)
            v1 = linalg.solve_triangular(self.chol[b], k1.T, lower=True, check_finite=False)
            v2 = linalg.solve_triangular(self.chol[b], k2.T, lower=True, check_finite=False)
            out[b] = prior - v1.T @ v2
        return out + self.kernel_shift

    # ------------------------------------------------------------------
    # covariance of variances
    #
    # The cross moment X_{m m2}[a, b, d] = E E[(mu_m[a] - mu_0[a]) k_b (mu_m2[d] - mu_0[d])]
    # is a small posterior variance left after a prior term and a data term
    # cancel.  Writing the prior term as a bilinear form in the mean weights
    # loses every significant digit once the Gram matrix is ill-conditioned,
    # so instead each axis of r_b is expanded in its eigenbasis on the
    # quadrature nodes.  The prior term becomes sum_k lam_k c_k(a) c_k(d), where
    # each projection c_k is a single weighted sum, as stable as a prediction.

    def modes(self, b: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Eigenpairs of ``r_b`` on axis ``j`` under the quadrature measure.

        Returns ``lam`` (descending, truncated at ``1e-14`` of the largest) and
        ``proj`` of shape ``(Q, r)`` such that the projection of a function with
        node values ``f`` onto mode ``k`` is ``proj[:, k] @ f``.
        """
        key = (b, j)
        if key not in self._mode_cache:
            sw = np.sqrt(self.weights)
            lam, U = linalg.eigh(sw[:, None] * self._r_nodes(b, j) * sw[None, :])
            keep = lam > _MODE_TOL * lam[-1]
            lam, U = lam[keep][::-1], U[:, keep][:, ::-1]
            self._mode_cache[key] = (lam, U * sw[:, None])
        return self._mode_cache[key]

    def _split(self, b: int, axes: list[int]) -> tuple[list[int], list[int]]:
        """Cut the shared axes into two groups of similar total mode count."""
        ranks = [len(self.modes(b, j)[0]) for j in axes]
        total = float(np.prod(ranks)) if ranks else 1.0
        acc, cut = 1.0, 0
        while cut < len(axes) and acc * ranks[cut] <= math.sqrt(total) * 1.0000001:
            acc *= ranks[cut]
            cut += 1
        cut = max(cut, 1) if axes else 0
        return axes[:cut], axes[cut:]

    def _group(self, a: int, b: int, axes: list[int]):
        """Khatri-Rao product of mode projections over ``axes``, with its weights."""
        if not axes:
            return np.ones((1, self.n_train)), np.ones(1), np.ones(1)
        mats, lams, ones = None, np.ones(1), np.ones(1)
        for j in axes:
            lam, proj = self.modes(b, j)
            P = proj.T @ self._phi_nodes(a, j)
            mats = P if mats is None else (mats[:, None, :] * P[None, :, :]).reshape(-1, self.n_train)
            lams = np.kron(lams, lam)
            ones = np.kron(ones, proj.sum(axis=0))
        return mats, lams, ones

    def _projection(self, a: int, b: int, m: AxisSet, m2: AxisSet):
        """Mode coefficients of ``(mu_m[a] - mu_0[a])`` against kernel ``b``.

        Axes in ``m`` and ``m2`` are projected on the eigenbasis of ``r_b``;
        axes only in ``m`` are integrated against ``R_b``.  Returns the
        coefficient matrix and the matching eigenvalue products.
        """
        key = ("c", a, b, m, m2)
        if key in self._cache:
            return self._cache[key]
        shared = [j for j in m if j in m2]
        only = [j for j in m if j not in m2]
        q = self.w[a] * self._rest_product(a, m)
        mean_term = self.mean0[a]
        for j in only:
            q = q * self.H(a, b, j)
            mean_term = mean_term * self.RR[b, j]
        g1, g2 = self._split(b, shared)
        K1, lam1, one1 = self._group(a, b, g1)
        K2, lam2, one2 = self._group(a, b, g2)
        coef = (K1 * q) @ K2.T - mean_term * np.outer(one1, one2)
        out = (coef, np.outer(lam1, lam2))
        self._cache[key] = out
        return out

    def _whitened_g(self, a: int, b: int, m: AxisSet) -> np.ndarray:
        """``L_b^{-1} int (mu_m[a] - mu_0[a]) k_b(u, x_p) du``."""
        key = ("g", a, b, m)
        if key in self._cache:
            return self._cache[key]
        q = self.w[a] * self._rest_product(a, m)
        if m.is_empty:
            inner = np.full(self.n_train, q.sum() - self.mean0[a])
        else:
            G = _hadamard([self.G(a, b, j) for j in m])
            inner = G.T @ q - self.mean0[a] * np.prod(self.I[b, list(m.axes)], axis=0)
        g = self.s2[b] * self._rest_product(b, m) * inner
        out = linalg.solve_triangular(self.chol[b], g, lower=True, check_finite=False)
        self._cache[key] = out
        return out

    def _centred_mean(self, a: int, m: AxisSet) -> float:
        """``E[mu_m[a] - mu_0[a]]``, zero up to rounding."""
        q = self.w[a] * self._rest_product(a, m)
        if len(m):
            q = q * np.prod(self.I[a, list(m.axes)], axis=0)
        return float(q.sum() - self.mean0[a])

    def cross_moment(self, a: int, b: int, d: int, m, m2) -> float:
        """Centred cross moment ``X_{m m2}[a, b, d]``.

        ``E_u E_u'[(mu_m[a](u) - mu_0[a]) k_b(u, u') (mu_m2[d](u') - mu_0[d])]`` where
        ``k_b`` is the posterior kernel of output ``b`` (plus ``kernel_shift``).
        """
        m, m2 = self._axes(m), self._axes(m2)
        if m.is_empty or m2.is_empty:
            return 0.0
        ca, lam = self._projection(a, b, m, m2)
        cd, _ = self._projection(d, b, m2, m)
        neither = [j for j in range(self.n_inputs) if j not in m and j not in m2]
        scale = self.s2[b] * (np.prod(self.RR[b, neither]) if neither else 1.0)
        prior = scale * float(np.sum(lam * ca * cd))
        post = float(self._whitened_g(a, b, m) @ self._whitened_g(d, b, m2))
        shift = self.kernel_shift * self._centred_mean(a, m) * self._centred_mean(d, m2)
        return prior - post + shift

    def clear_cache(self) -> None:
        self._cache.clear()

    def covariance_of_variances(self, m, m2) -> np.ndarray:
        """Full ``W_{m m2}`` tensor, shape ``(L, L, L, L)``.

        ``W[a, b, c, d] = d_bc X[a,b,d] + d_ac X[b,a,d] + d_bd X[a,b,c] + d_ad X[b,a,c]``
        with ``X`` the centred cross moment; the Kronecker deltas come from the
        posterior kernel being diagonal across outputs.  Costs ``O(L^3)`` cross
        moments, so it is meant for small problems and testing.
        """
        m, m2 = self._axes(m), self._axes(m2)
        L = self.n_outputs
        X = np.zeros((L, L, L))
        for a in range(L):
            for b in range(L):
                for d in range(L):
                    X[a, b, d] = self.cross_moment(a, b, d, m, m2)
        self.clear_cache()
        eye = np.eye(L)
        W = (
            np.einsum("bc,abd->abcd", eye, X)
            + np.einsum("ac,bad->abcd", eye, X)
            + np.einsum("bd,abc->abcd", eye, X)
            + np.einsum("ad,bac->abcd", eye, X)
        )
        return W

    def error_terms(self, subsets) -> list[ErrorTerms]:
        """The ``W`` slices needed for the Taylor standard errors of each subset.

        Only ``X_mm[x, y, x]``, ``X_mM[x, y, y]`` and ``X_MM[x, x, x]`` are
        required, which keeps the cost at ``O(L^2)`` cross moments per subset.
        """
        subsets = [self._axes(m) for m in subsets]
        L, M = self.n_outputs, self.n_inputs
        full = AxisSet.full(M)
        X_mm = np.zeros((len(subsets), L, L))
        X_mM = np.zeros((len(subsets), L, L))
        X_MM = np.zeros(L)
        for y in range(L):
            X_MM[y] = self.cross_moment(y, y, y, full, full)
            for x in range(L):
                for k, m in enumerate(subsets):
                    X_mm[k, x, y] = self.cross_moment(x, y, x, m, m)
                    X_mM[k, x, y] = self.cross_moment(x, y, y, m, full)
            self.clear_cache()
        eye = np.eye(L)
        w_MM = 4.0 * np.diag(X_MM)
        out = []
        for k, m in enumerate(subsets):
            xm = X_mm[k]
            # W_mm[l,l',l,l'] = d X[l,l',l'] + X[l',l,l'] + X[l,l',l] + d X[l',l,l]
            w_mm = xm.T + xm + eye * (np.diag(xm)[:, None] + np.diag(xm)[None, :])
            # W_mM[l,l',l,l] = 2 d_{l'l} X[l,l',l'] + 2 X[l',l,l], and the mirror
            xM = X_mM[k]
            w_mM = np.stack([2.0 * eye * xM + 2.0 * xM.T, 2.0 * xM + 2.0 * eye * xM.T], axis=-1)
            out.append(ErrorTerms(m, w_mm, w_mM, w_MM.copy()))
        return out


def _khatri_rao(mats, n: int) -> np.ndarray:
    """Row-wise Kronecker product of ``(r_i, n)`` matrices, shape ``(prod r_i, n)``."""
    out = np.ones((1, n))
    for mat in mats:
        out = (out[:, None, :] * mat[None, :, :]).reshape(-1, n)
    return out


def _hadamard(mats):
    out = mats[0].copy()
    for mat in mats[1:]:
        out *= mat
    return out


# functional wrappers ---------------------------------------------------


def marginal_mean(s, m, u_m, **engine):
    return MomentEngine(s, **engine).marginal_mean(m, u_m)


def marginal_variance(s, m, **engine):
    return MomentEngine(s, **engine).marginal_variance(m)


def marginal_second_moment(s, m, m2, u_m, u_m2, **engine):
    return MomentEngine(s, **engine).marginal_second_moment(m, m2, u_m, u_m2)


def covariance_of_variances(s, m, m2, **engine):
    return MomentEngine(s, **engine).covariance_of_variances(m, m2)
