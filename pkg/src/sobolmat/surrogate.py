"""Independent RBF-kernel Gaussian processes, one per output, on a shared design.

The fitted estimator supplies the two moments the sensitivity machinery needs:
the posterior mean (``predict``) and the posterior covariance of the latent
function (``posterior_kernel``).  Outputs are modelled independently, so the
cross-output posterior covariance is identically zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import FactorizationFailure, NonFiniteLikelihood
from .sampling import DesignMatrix

log = logging.getLogger(__name__)

__all__ = [
    "RbfKernelParams",
    "GaussianProcessSurrogate",
    "rbf_kernel",
    "fit",
    "predict_mean",
    "posterior_kernel",
    "validate",
]

_JITTER_START = 1e-8
_JITTER_STOP = 1e-2
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RbfKernelParams:
    """ARD lengthscales, signal variance and observation-noise variance."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if np.any(~(ls > 0)) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise variance must be non-negative")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    def to_dict(self) -> dict:
        return {
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


def rbf_kernel(X1, X2, params: RbfKernelParams) -> np.ndarray:
    """Prior covariance ``s2 * exp(-|x - x'|^2 / 2)`` in lengthscale units."""
    A = np.asarray(X1, dtype=float) / params.lengthscales
    B = np.asarray(X2, dtype=float) / params.lengthscales
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        d2 += np.subtract.outer(A[:, j], B[:, j]) ** 2
    return params.signal_variance * np.exp(-0.5 * d2)


def _factorize(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``K + jitter I`` with escalating jitter."""
    n = K.shape[0]
    scale = float(np.trace(K)) / n
    jitter = _JITTER_START * scale
    while jitter <= _JITTER_STOP * scale * (1 + 1e-9):
        Kj = K.copy()
        Kj[np.diag_indices(n)] += jitter
        try:
            return linalg.cholesky(Kj, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure(f"Gram matrix indefinite with jitter up to {_JITTER_STOP:g} x mean diagonal")


def _gram(sqd: np.ndarray, ls: np.ndarray, s2: float, n2: float) -> tuple[np.ndarray, np.ndarray]:
    R = np.exp(-0.5 * np.tensordot(1.0 / ls**2, sqd, axes=1))
    K = s2 * R
    K[np.diag_indices(K.shape[0])] += n2
    return K, R


def _sq_dists(X: np.ndarray) -> np.ndarray:
    return np.stack([np.subtract.outer(X[:, j], X[:, j]) ** 2 for j in range(X.shape[1])])


def _neg_lml(theta, sqd, y):
    """Negative log marginal likelihood and its gradient in log-parameters.

    ``theta`` holds log lengthscales, log signal variance and the log of the
    noise-to-signal ratio, so the noise variance is ``ratio * s2``.
    """
    m = sqd.shape[0]
    ls = np.exp(theta[:m])
    s2 = math.exp(theta[m])
    n2 = s2 * math.exp(theta[m + 1])
    K, R = _gram(sqd, ls, s2, n2)
    L, _ = _factorize(K)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * _LOG_2PI
    if not np.isfinite(lml):
        raise NonFiniteLikelihood(f"log marginal likelihood is {lml}")
    Kinv, info = linalg.lapack.dpotri(L, lower=1)
    if info:
        raise FactorizationFailure(f"dpotri failed with info={info}")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    A = np.outer(alpha, alpha) - Kinv
    B = A * (s2 * R)
    grad = np.empty(m + 2)
    grad[:m] = 0.5 * np.tensordot(sqd, B, axes=([1, 2], [0, 1])) / ls**2
    grad[m + 1] = 0.5 * n2 * np.trace(A)
    grad[m] = 0.5 * B.sum() + grad[m + 1]
    return -lml, -grad


class GaussianProcessSurrogate(RegressorMixin, BaseEstimator):
    """One RBF Gaussian process per output column, sharing the training inputs.

    Hyperparameters are optimized in log space by L-BFGS-B from ``n_restarts``
    seeded starting points; the best restart wins.  When there are more than
    ``max_restart_points`` training rows, the restarts run on a seeded
    subsample and only the winner is refined on the full data (at most
    ``polish_max_iter`` iterations).

    The noise variance is searched as a multiple of the signal variance.  A
    floor on that ratio bounds the condition number of the Gram matrix, which
    keeps the mean weights small enough for the moment integrals to stay
    accurate in double precision.

    Parameters
    ----------
    n_restarts : int
        Number of optimizer starts per output.  The first start is a fixed
        default; the rest are drawn log-uniformly.
    random_state : int
        Seed for restart draws and subsampling.
    lengthscale_bounds, signal_variance_bounds : tuple
        Box constraints on the hyperparameters.
    noise_ratio_bounds : tuple
        Box constraint on ``noise_variance / signal_variance``.
    max_iter : int
        L-BFGS-B iteration cap per restart.
    max_restart_points : int
        Subsample size used for the restarts on large designs.
    polish_max_iter : int
        Iteration cap for the full-data refinement.
    """

    def __init__(
        self,
        n_restarts=8,
        random_state=0,
        lengthscale_bounds=(1e-3, 1e3),
        signal_variance_bounds=(1e-4, 1e4),
        noise_ratio_bounds=(1e-6, 1e4),
        max_iter=200,
        max_restart_points=400,
        polish_max_iter=40,
    ):
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.lengthscale_bounds = lengthscale_bounds
        self.signal_variance_bounds = signal_variance_bounds
        self.noise_ratio_bounds = noise_ratio_bounds
        self.max_iter = max_iter
        self.max_restart_points = max_restart_points
        self.polish_max_iter = polish_max_iter

    # fitting ------------------------------------------------------------

    def _log_bounds(self, m):
        lo_l, hi_l = np.log(self.lengthscale_bounds)
        lo_s, hi_s = np.log(self.signal_variance_bounds)
        lo_n, hi_n = np.log(self.noise_ratio_bounds)
        return [(lo_l, hi_l)] * m + [(lo_s, hi_s), (lo_n, hi_n)]

    def _starts(self, rng, m, bounds):
        starts = [np.r_[np.full(m, math.log(0.3)), 0.0, math.log(1e-2)]]
        for _ in range(max(self.n_restarts, 1) - 1):
            starts.append(
                np.r_[
                    rng.uniform(math.log(0.05), math.log(3.0), m),
                    rng.uniform(math.log(0.3), math.log(3.0)),
                    rng.uniform(math.log(1e-6), math.log(0.5)),
                ]
            )
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        return [np.clip(s, lo, hi) for s in starts]

    @staticmethod
    def _minimize(theta0, sqd, y, bounds, max_iter):
        trace = []

        def record(intermediate_result):
            trace.append(-float(intermediate_result.fun))

        res = optimize.minimize(
            _neg_lml,
            theta0,
            args=(sqd, y),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=record,
            options={"maxiter": max_iter},
        )
        return res, trace

    def _fit_one(self, X, y, sqd_full, rng):
        n, m = X.shape
        bounds = self._log_bounds(m)
        starts = self._starts(rng, m, bounds)
        if n > self.max_restart_points:
            rows = np.sort(rng.choice(n, self.max_restart_points, replace=False))
            sqd, ys = sqd_full[:, rows[:, None], rows[None, :]], y[rows]
        else:
            rows, sqd, ys = None, sqd_full, y
        best, best_trace = None, []
        for theta0 in starts:
            try:
                res, trace = self._minimize(theta0, sqd, ys, bounds, self.max_iter)
            except (FactorizationFailure, NonFiniteLikelihood) as exc:
                log.debug("restart abandoned: %s", exc)
                continue
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best, best_trace = res, trace
        if best is None:
            raise FactorizationFailure("every optimizer restart failed")
        traces = [best_trace]
        theta = best.x
        if rows is not None and self.polish_max_iter > 0:
            try:
                res, trace = self._minimize(theta, sqd_full, y, bounds, self.polish_max_iter)
                theta = res.x
                traces.append(trace)
            except (FactorizationFailure, NonFiniteLikelihood) as exc:
                log.warning("full-data refinement failed, keeping subsample optimum: %s", exc)
        return (
            RbfKernelParams(
                np.exp(theta[:m]), math.exp(theta[m]), math.exp(theta[m] + theta[m + 1])
            ),
            traces,
        )

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2)
        Y = np.asarray(y, dtype=float)
        self._single_output = Y.ndim == 1
        Y = Y.reshape(len(Y), -1)
        if Y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different row counts")
        if not np.all(np.isfinite(Y)):
            raise ValueError("targets must be finite")
        sqd = _sq_dists(X)
        root = np.random.SeedSequence(self.random_state)
        params, traces = [], []
        for l, child in enumerate(root.spawn(Y.shape[1])):
            p, tr = self._fit_one(X, Y[:, l], sqd, np.random.default_rng(child))
            params.append(p)
            traces.append(tr)
        self._set_state(X, Y, params)
        self.optimizer_traces_ = traces
        return self

    @classmethod
    def from_params(cls, X, y, params, jitters=None, dual_weights=None, **init):
        """Condition GPs with given hyperparameters on data, skipping optimization."""
        est = cls(**init)
        X = check_array(X)
        Y = np.asarray(y, dtype=float)
        est._single_output = Y.ndim == 1
        Y = Y.reshape(len(Y), -1)
        if isinstance(params, RbfKernelParams):
            params = [params] * Y.shape[1]
        est._set_state(X, Y, list(params), jitters, dual_weights)
        est.optimizer_traces_ = [[] for _ in params]
        return est

    def _set_state(self, X, Y, params, jitters=None, dual_weights=None):
        if len(params) != Y.shape[1]:
            raise ValueError("need one parameter set per output")
        n, m = X.shape
        sqd = _sq_dists(X)
        self.X_train_ = X
        self.y_train_ = Y
        self.params_ = params
        self.n_features_in_ = m
        self.chol_, self.jitter_, lml, cond, weights = [], [], [], [], []
        for l, p in enumerate(params):
            if p.lengthscales.shape != (m,):
                raise ValueError(f"output {l}: expected {m} lengthscales")
            K, _ = _gram(sqd, p.lengthscales, p.signal_variance, p.noise_variance)
            if jitters is None:
                L, jit = _factorize(K)
            else:
                jit = float(jitters[l])
                K[np.diag_indices(n)] += jit
                try:
                    L = linalg.cholesky(K, lower=True, check_finite=False)
                except linalg.LinAlgError as exc:
                    raise FactorizationFailure(str(exc)) from exc
            alpha = linalg.cho_solve((L, True), Y[:, l], check_finite=False)
            logdet = np.log(np.diag(L)).sum()
            lml.append(float(-0.5 * Y[:, l] @ alpha - logdet - 0.5 * n * _LOG_2PI))
            d = np.diag(L) ** 2
            cond.append(float(d.max() / d.min()))
            self.chol_.append(L)
            self.jitter_.append(jit)
            weights.append(alpha if dual_weights is None else np.asarray(dual_weights[l], dtype=float))
        self.dual_weights_ = np.array(weights)
        self.log_marginal_likelihood_ = np.array(lml)
        self.condition_ = np.array(cond)

    # prediction ---------------------------------------------------------

    @property
    def n_outputs_(self) -> int:
        return len(self.params_)

    def _check_inputs(self, U):
        check_is_fitted(self, "dual_weights_")
        U = check_array(U)
        if U.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} input columns, got {U.shape[1]}")
        return U

    def predict(self, X, return_std=False):
        """Posterior mean, and optionally the latent posterior sd, per output."""
        U = self._check_inputs(X)
        mean = np.empty((U.shape[0], self.n_outputs_))
        std = np.empty_like(mean) if return_std else None
        for l, p in enumerate(self.params_):
            Ks = rbf_kernel(U, self.X_train_, p)
            mean[:, l] = Ks @ self.dual_weights_[l]
            if return_std:
                v = linalg.solve_triangular(self.chol_[l], Ks.T, lower=True, check_finite=False)
                std[:, l] = np.sqrt(np.maximum(p.signal_variance - (v * v).sum(axis=0), 0.0))
        if self._single_output:
            mean = mean[:, 0]
            std = std[:, 0] if return_std else None
        return (mean, std) if return_std else mean

    def posterior_kernel(self, U, U2=None) -> np.ndarray:
        """Latent posterior covariance, shape ``(L, P, P')``; outputs are uncorrelated."""
        U = self._check_inputs(U)
        U2 = U if U2 is None else self._check_inputs(U2)
        out = np.empty((self.n_outputs_, U.shape[0], U2.shape[0]))
        for l, p in enumerate(self.params_):
            v1 = linalg.solve_triangular(
                self.chol_[l], rbf_kernel(U, self.X_train_, p).T, lower=True, check_finite=False
            )
            v2 = linalg.solve_triangular(
                self.chol_[l], rbf_kernel(U2, self.X_train_, p).T, lower=True, check_finite=False
            )
            out[l] = rbf_kernel(U, U2, p) - v1.T @ v2
        return out

    def validate(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        """Per-output RMSE on held-out data and mean latent predictive sd."""
        Y = np.asarray(y, dtype=float).reshape(len(y), -1)
        mean, std = self.predict(X, return_std=True)
        mean = mean.reshape(len(Y), -1)
        std = std.reshape(len(Y), -1)
        rmse = np.sqrt(np.mean((mean - Y) ** 2, axis=0))
        return rmse, std.mean(axis=0)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "dual_weights_")
        return {
            "format": "sobolmat-surrogate",
            "version": 1,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "single_output": bool(self._single_output),
            "inputs": self.X_train_.tolist(),
            "targets": self.y_train_.tolist(),
            "outputs": [
                {
                    **p.to_dict(),
                    "jitter": self.jitter_[l],
                    "dual_weights": self.dual_weights_[l].tolist(),
                    "log_marginal_likelihood": float(self.log_marginal_likelihood_[l]),
                    "condition": float(self.condition_[l]),
                }
                for l, p in enumerate(self.params_)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianProcessSurrogate":
        if doc.get("format") != "sobolmat-surrogate":
            raise ValueError("not a surrogate document")
        config = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.get("config", {}).items()}
        X = np.array(doc["inputs"], dtype=float)
        Y = np.array(doc["targets"], dtype=float).reshape(len(X), -1)
        outs = doc["outputs"]
        params = [RbfKernelParams(o["lengthscales"], o["signal_variance"], o["noise_variance"]) for o in outs]
        est = cls.from_params(
            X,
            Y,
            params,
            jitters=[o["jitter"] for o in outs],
            dual_weights=[o["dual_weights"] for o in outs],
            **config,
        )
        est._single_output = bool(doc.get("single_output", False))
        return est

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "GaussianProcessSurrogate":
        return cls.from_dict(json.loads(Path(path).read_text()))


# functional surface -----------------------------------------------------


def fit(design: DesignMatrix, **config) -> GaussianProcessSurrogate:
    """Fit a surrogate to a design matrix; ``config`` holds estimator parameters."""
    return GaussianProcessSurrogate(**config).fit(design.inputs, design.outputs)


def predict_mean(s: GaussianProcessSurrogate, u) -> np.ndarray:
    return np.asarray(s.predict(u)).reshape(len(np.atleast_2d(u)), -1)


def posterior_kernel(s: GaussianProcessSurrogate, u, u2=None) -> np.ndarray:
    return s.posterior_kernel(u, u2)


def validate(s: GaussianProcessSurrogate, held_out: DesignMatrix):
    return s.validate(held_out.inputs, held_out.outputs)
