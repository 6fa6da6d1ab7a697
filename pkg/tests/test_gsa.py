import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from sklearn.base import clone

from sobolmat import GaussianProcessSurrogate, SobolMatrices
from sobolmat.axes import AxisSet, hadamard_div
from sobolmat.exceptions import HadamardDivisionError, NegativeQError, ZeroVarianceError
from sobolmat.gsa import (
    SobolReport,
    closed_sobol_matrix,
    compute_reports,
    filter_reports,
    first_order_matrix,
    oracle_sobol_matrices,
    oracle_sobol_matrix,
    q_matrix,
    seminorm,
    sobol_error,
    total_sobol_error,
    total_sobol_matrix,
)
from sobolmat.moments import ErrorTerms, gauss_legendre

from _invariants import check_invariants, random_gps
from conftest import small_gp


def toy(u):
    """Two outputs, w(u0) + w(u1) and w(u0) - w(u1), with w(u) = sqrt(3) (2u - 1)."""
    u = np.atleast_2d(u)
    w0 = math.sqrt(3) * (2 * u[:, 0] - 1)
    w1 = math.sqrt(3) * (2 * u[:, 1] - 1)
    return np.column_stack([w0 + w1, w0 - w1])


HALF = np.full((2, 2), 0.5)
OPPOSED = np.array([[0.5, -0.5], [-0.5, 0.5]])


class TestToyExample:
    @pytest.mark.parametrize("method", ["quadrature", "qmc"])
    def test_closed_matrices(self, method):
        S0, S1, S01 = oracle_sobol_matrices(toy, [(0,), (1,), (0, 1)], 2, n_points=2**14, method=method)
        tol = 1e-12 if method == "quadrature" else 2e-3
        np.testing.assert_allclose(S0, HALF, atol=tol)
        np.testing.assert_allclose(S1, OPPOSED, atol=tol)
        np.testing.assert_allclose(S01, np.eye(2), atol=tol)

    def test_total_equals_closed(self):
        S0, S1, S01 = oracle_sobol_matrices(toy, [(0,), (1,), (0, 1)], 2, method="quadrature")
        np.testing.assert_allclose(total_sobol_matrix(S01, S1), S0, atol=1e-12)

    def test_surrogate_recovers_toy(self):
        rng = np.random.default_rng(0)
        X = rng.random((40, 2))
        est = SobolMatrices(subsets=[(0,), (1,)]).fit(X, toy(X))
        np.testing.assert_allclose(est.report((0,)).S, HALF, atol=1e-3)
        np.testing.assert_allclose(est.report((1,)).S, OPPOSED, atol=1e-3)

    def test_direct_ratio_is_undefined(self):
        # dividing by the full matrix elementwise fails on its zero off-diagonal
        S0, S01 = oracle_sobol_matrices(toy, [(0,), (0, 1)], 2, method="quadrature")
        S01[np.abs(S01) < 1e-12] = 0.0
        with pytest.raises(HadamardDivisionError):
            hadamard_div(S0, S01)


class TestMatrices:
    def test_closed_matrix(self):
        V = np.array([[4.0, 1.0], [1.0, 9.0]])
        np.testing.assert_allclose(closed_sobol_matrix(V, [2.0, 3.0]), [[1.0, 1 / 6], [1 / 6, 1.0]])

    def test_zero_sd_rejected(self):
        with pytest.raises(HadamardDivisionError):
            closed_sobol_matrix(np.eye(2), [1.0, 0.0])

    def test_total_matrix_shape_check(self):
        with pytest.raises(ValueError):
            total_sobol_matrix(np.eye(2), np.eye(3))

    def test_total_error_adds(self):
        np.testing.assert_allclose(total_sobol_error([[0.0, 0.1]], [[0.2, 0.3]]), [[0.2, 0.4]])


class TestSobolError:
    def terms(self, m, w_mm, w_mM0, w_mM1, w_MM):
        w_mM = np.stack([np.asarray(w_mM0, float), np.asarray(w_mM1, float)], axis=-1)
        return ErrorTerms(m, np.asarray(w_mm, float), w_mM, np.asarray(w_MM, float))

    def test_scalar_delta_method(self):
        # S = V/D2 with Var V = a, Cov(V, D2) = b, Var D2 = c
        V, D2, a, b, c = 0.3, 2.0, 0.01, 0.004, 0.02
        t = self.terms(AxisSet([0], 2), [[a]], [[b]], [[b]], [[c]])
        expected = a - 2 * (V / D2) * b + (V / D2) ** 2 * c
        assert q_matrix(t, [[V]], [math.sqrt(D2)])[0, 0] == pytest.approx(expected)
        T = sobol_error(t, [[V]], [math.sqrt(D2)])
        assert T[0, 0] == pytest.approx(math.sqrt(expected) / D2)

    def test_full_set_diagonal_is_zero(self):
        t = self.terms(AxisSet.full(1), [[0.04]], [[0.04]], [[0.04]], [[0.04]])
        assert sobol_error(t, [[1.0]], [1.0])[0, 0] == 0.0

    def test_rounding_negative_clamped(self):
        t = self.terms(AxisSet([0], 2), [[1.0]], [[1.0 + 1e-7]], [[1.0 + 1e-7]], [[1.0]])
        assert sobol_error(t, [[1.0]], [1.0])[0, 0] == 0.0

    def test_material_negative_raises_or_nan(self):
        t = self.terms(AxisSet([0], 2), [[0.0]], [[1.0]], [[1.0]], [[0.0]])
        with pytest.raises(NegativeQError):
            sobol_error(t, [[1.0]], [1.0])
        assert np.isnan(sobol_error(t, [[1.0]], [1.0], strict=False)[0, 0])


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(random_gps())
def test_structural_invariants_on_random_gps(gp):
    assert check_invariants(gp) > 0


def test_taylor_error_matches_posterior_sampling():
    """The Taylor error agrees with the spread of S_m over posterior draws."""
    gp = small_gp(seed=0, n=30, m=2, L=2, noise=1e-4)
    reports = compute_reports(gp, [(0,), (1,)])
    x, w = gauss_legendre(20, 1)
    grid = np.array([(a, b) for a in x for b in x])
    mu, K = gp.predict(grid), gp.posterior_kernel(grid)
    rng = np.random.default_rng(0)
    draws = []
    for l in range(2):
        ev, vec = np.linalg.eigh(K[l])
        z = rng.standard_normal((len(ev), 4000))
        draws.append(mu[:, l, None] + vec @ (np.sqrt(np.clip(ev, 0, None))[:, None] * z))
    F = np.stack(draws, 1).reshape(len(x), len(x), 2, -1)
    f0 = np.einsum("ijls,i,j->ls", F, w, w)
    c = F - f0
    D = np.sqrt(np.einsum("ijls,ijls,i,j->ls", c, c, w, w))
    for rep, axis in zip(reports, (0, 1)):
        fm = np.einsum("ijls,j->ils", F, w) if axis == 0 else np.einsum("ijls,i->jls", F, w)
        cm = fm - f0
        S = np.einsum("ias,ibs,i->abs", cm, cm, w) / (D[:, None] * D[None, :])
        sd = S.std(axis=-1)
        np.testing.assert_allclose(rep.T, sd, rtol=0.25)


class TestComputeReports:
    def test_full_set_always_added(self, gp2):
        reps = compute_reports(gp2, [(0,)], compute_errors=False)
        assert [r.m.axes for r in reps] == [(0,)]
        assert reps[0].T is None

    def test_diagnostics(self, gp2):
        (rep,) = compute_reports(gp2, [(1,)])
        assert rep.diagnostics["method"] == "quadrature"
        assert rep.diagnostics["nonfinite_T"] == 0
        assert len(rep.diagnostics["taylor_ratio"]) == 2

    def test_backends_agree(self, gp2):
        q = compute_reports(gp2, [(0,)], method="quadrature")[0]
        c = compute_reports(gp2, [(0,)], method="closed")[0]
        np.testing.assert_allclose(q.S, c.S, atol=1e-9)
        np.testing.assert_allclose(q.T, c.T, atol=1e-7)

    @pytest.mark.parametrize("shift", [0.1, 1.0])
    def test_kernel_shift_changes_nothing(self, gp2, shift):
        a = compute_reports(gp2, [(0,), (1,)])
        b = compute_reports(gp2, [(0,), (1,)], kernel_shift=shift)
        for ra, rb in zip(a, b):
            assert np.abs(ra.S - rb.S).max() <= 1e-10
            assert np.abs(ra.T - rb.T).max() <= 1e-10

    def test_constant_output_rejected(self):
        X = np.random.default_rng(0).random((6, 1))
        from sobolmat import RbfKernelParams

        gp = GaussianProcessSurrogate.from_params(X, np.zeros(6), RbfKernelParams([0.3], 1.0, 1e-3))
        with pytest.raises(ZeroVarianceError):
            compute_reports(gp, [(0,)])

    def test_first_order_matrix(self, gp2):
        np.testing.assert_allclose(first_order_matrix(gp2, 1), compute_reports(gp2, [(1,)])[0].S)
        with pytest.raises(ValueError):
            first_order_matrix(gp2, 2)


class TestOracle:
    def test_qmc_matches_quadrature(self):
        f = lambda u: np.column_stack([u[:, 0] + u[:, 1] ** 2, u[:, 0] * u[:, 2]])
        subsets = [(0,), (1, 2), (0, 2)]
        q = oracle_sobol_matrices(f, subsets, 3, method="quadrature", order=12)
        m = oracle_sobol_matrices(f, subsets, 3, n_points=2**15)
        for a, b in zip(q, m):
            np.testing.assert_allclose(a, b, atol=3e-3)

    def test_constant_output(self):
        with pytest.raises(ZeroVarianceError):
            oracle_sobol_matrix(lambda u: np.ones(len(u)), [0], ambient=1, n_points=64)

    def test_needs_ambient(self):
        with pytest.raises(ValueError):
            oracle_sobol_matrix(toy, [0])

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            oracle_sobol_matrices(toy, [(0,)], 2, method="mc")


class TestFilter:
    def report(self, S, T=None, axes=(0,)):
        S = np.asarray(S, float)
        return SobolReport(AxisSet(axes, 2), S, S, S, np.ones(len(S)), None if T is None else np.asarray(T, float))

    def test_clean_reports_pass(self):
        verdict = filter_reports([self.report([[0.5, 0.1], [0.1, 0.4]], [[0.01, 0.02], [0.02, 0.0]])])
        assert verdict.removed == []
        assert verdict.kept(2).all()

    def test_diagonal_above_window(self):
        verdict = filter_reports([self.report([[1.002, 0.0], [0.0, 0.5]])])
        assert verdict.removed == [0]
        assert "S[0,0]" in verdict.reasons[0]

    def test_window_edges_are_inside(self):
        verdict = filter_reports([self.report([[1.001, 0.0], [0.0, -0.001]])])
        assert verdict.removed == []

    def test_bad_error_removes_both_outputs(self):
        verdict = filter_reports([self.report(np.eye(2) * 0.5, [[0.0, np.nan], [np.nan, 0.0]])])
        assert verdict.removed == [0, 1]

    def test_off_diagonal_s_not_filtered(self):
        verdict = filter_reports([self.report([[0.5, -0.7], [-0.7, 0.9]])])
        assert verdict.removed == []


def test_seminorm():
    S = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.2], [0.0, 0.2, 1.0]])
    assert seminorm(S, [0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert seminorm(S, [2]) == 1.0
    assert seminorm(S, kind="maxabs") == 1.0
    with pytest.raises(ValueError):
        seminorm(S, kind="trace")


class TestEstimator:
    def test_fit_and_attributes(self):
        X = np.random.default_rng(1).random((30, 2))
        est = SobolMatrices(surrogate=GaussianProcessSurrogate(n_restarts=2)).fit(X, toy(X))
        assert est.S_.shape == (2, 2, 2)
        assert [m.axes for m in est.subsets_] == [(0,), (0, 1)]
        np.testing.assert_allclose(est.S_[1], np.eye(2), atol=1e-3)
        with pytest.raises(KeyError):
            est.report((1,))

    def test_no_errors(self, gp2):
        est = SobolMatrices(compute_errors=False).fit_surrogate(gp2)
        assert est.T_ is None

    def test_rejects_inputs_outside_cube(self):
        with pytest.raises(ValueError):
            SobolMatrices().fit(np.full((4, 1), 2.0), np.arange(4.0))

    def test_clone(self):
        est = SobolMatrices(subsets=[(0,)], method="closed")
        assert clone(est).get_params() == est.get_params()
