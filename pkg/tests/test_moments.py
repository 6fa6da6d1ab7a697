import numpy as np
import pytest
from scipy import integrate

from sobolmat.axes import AxisSet
from sobolmat.exceptions import IntegrationFailure
from sobolmat.moments import (
    MomentEngine,
    auto_panels,
    box_double_integral,
    box_gaussian_integral,
    covariance_of_variances,
    error_terms_from_tensors,
    gauss_legendre,
    marginal_variance,
)

from _bruteforce import BruteForce
from conftest import small_gp


def rel(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)).max() / np.abs(np.asarray(b)).max()


@pytest.fixture(scope="module")
def gp():
    return small_gp(seed=3, n=14, m=2, L=2, ls=(0.3, 0.45), noise=1e-2)


@pytest.fixture(scope="module")
def brute(gp):
    return BruteForce(gp)


class TestQuadratureRules:
    @pytest.mark.parametrize("panels", [1, 3])
    def test_integrates_polynomials_exactly(self, panels):
        x, w = gauss_legendre(8, panels)
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        for k in range(16):
            assert w @ x**k == pytest.approx(1 / (k + 1), rel=1e-13)

    def test_nodes_inside_unit_interval(self):
        x, _ = gauss_legendre(32, 5)
        assert np.all((x > 0) & (x < 1)) and np.all(np.diff(x) > 0)

    def test_panel_rule(self):
        assert auto_panels(1.0) == 1
        assert auto_panels(0.125) == 1
        assert auto_panels(0.01) == 13
        with pytest.raises(IntegrationFailure):
            auto_panels(1e-5)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            gauss_legendre(0)
        with pytest.raises(ValueError):
            auto_panels(0.0)


class TestClosedForms:
    @pytest.mark.parametrize("c,v", [(0.3, 0.1), (0.0, 0.5), (1.0, 2.0), (0.7, 0.02)])
    def test_box_gaussian(self, c, v):
        ref, _ = integrate.quad(lambda u: np.exp(-((u - c) ** 2) / (2 * v * v)), 0, 1, epsabs=1e-14)
        assert box_gaussian_integral(c, v) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("ell", [0.05, 0.3, 1.0, 30.0])
    def test_box_double(self, ell):
        ref, _ = integrate.dblquad(
            lambda u, v: np.exp(-((u - v) ** 2) / (2 * ell * ell)), 0, 1, 0, 1, epsabs=1e-13
        )
        assert box_double_integral(ell) == pytest.approx(ref, rel=1e-10)

    def test_backends_agree_on_building_blocks(self, gp):
        q, c = MomentEngine(gp, "quadrature"), MomentEngine(gp, "closed")
        assert rel(q.I, c.I) < 1e-8
        assert rel(q.RR, c.RR) < 1e-8
        for a in range(2):
            for b in range(2):
                for j in range(2):
                    assert rel(q.G(a, b, j), c.G(a, b, j)) < 1e-8

    def test_unknown_method(self, gp):
        with pytest.raises(ValueError):
            MomentEngine(gp, method="simpson")


class TestAgainstBruteForce:
    @pytest.mark.parametrize("method", ["quadrature", "closed"])
    @pytest.mark.parametrize("m", [(0,), (1,), (0, 1)])
    def test_variance(self, gp, brute, method, m):
        assert rel(marginal_variance(gp, m, method=method), brute.variance(m)) < 1e-6

    @pytest.mark.parametrize("method", ["quadrature", "closed"])
    @pytest.mark.parametrize("m,m2", [((0,), (0,)), ((0,), (0, 1)), ((1,), (0,)), ((0, 1), (0, 1))])
    def test_covariance_of_variances(self, gp, brute, method, m, m2):
        W = covariance_of_variances(gp, m, m2, method=method)
        assert rel(W, brute.covariance(m, m2)) < 1e-6

    def test_marginal_mean(self, gp, brute):
        e = MomentEngine(gp)
        Q = brute.Q
        # axis 0 varies slowest in the brute-force grid
        want = brute.mean_m((0,)).reshape(Q, Q, -1)[:, 0, :]
        got = e.marginal_mean((0,), brute.grid.reshape(Q, Q, 2)[:, 0, :1])
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)

    def test_marginal_second_moment(self, gp, brute):
        e = MomentEngine(gp)
        Q = brute.Q
        K = brute.kernel(1).reshape(Q, Q, Q * Q)
        # average the first point over axis 1
        want = np.tensordot(brute.w1, K, axes=([0], [1]))[::7, ::11]
        u0 = brute.grid.reshape(Q, Q, 2)[::7, 0, :1]
        got = e.marginal_second_moment((0,), (0, 1), u0, brute.grid[::11])[1]
        np.testing.assert_allclose(got, want, atol=1e-10)


class TestStructure:
    def test_full_set_matches_surrogate(self, gp):
        e = MomentEngine(gp)
        U = np.random.default_rng(0).random((5, 2))
        np.testing.assert_allclose(e.marginal_mean((0, 1), U), gp.predict(U))
        np.testing.assert_allclose(e.marginal_second_moment((0, 1), (0, 1), U, U), gp.posterior_kernel(U))

    def test_reduction_law(self, gp):
        # averaging mu_m over its own axes gives mu_0
        e = MomentEngine(gp)
        x, w = gauss_legendre(32, 1)
        assert np.allclose(w @ e.marginal_mean((1,), x[:, None]), e.mean0, atol=1e-13)

    def test_empty_set(self, gp):
        e = MomentEngine(gp)
        assert not e.marginal_variance(()).any()
        assert e.cross_moment(0, 0, 0, (), (0,)) == 0.0
        np.testing.assert_allclose(e.marginal_mean((), np.zeros((3, 0))), np.tile(e.mean0, (3, 1)))

    def test_variance_is_monotone_and_psd(self, gp):
        e = MomentEngine(gp)
        V0, V1, V01 = e.marginal_variances([(0,), (1,), (0, 1)])
        for V in (V0, V1, V01):
            np.testing.assert_allclose(V, V.T)
            assert np.linalg.eigvalsh(V).min() > -1e-12
        assert np.linalg.eigvalsh(V01 - V0).min() > -1e-12
        assert np.linalg.eigvalsh(V01 - V1).min() > -1e-12

    def test_rejects_points_outside_cube(self, gp):
        with pytest.raises(ValueError):
            MomentEngine(gp).marginal_mean((0,), [[1.5]])

    def test_kernel_shift_leaves_covariance_unchanged(self, gp):
        base = covariance_of_variances(gp, (0,), (0, 1))
        for c in (0.1, 1.0):
            shifted = covariance_of_variances(gp, (0,), (0, 1), kernel_shift=c)
            assert np.abs(shifted - base).max() < 1e-14

    def test_kernel_shift_moves_second_moment(self, gp):
        U = np.random.default_rng(1).random((3, 1))
        a = MomentEngine(gp).marginal_second_moment((0,), (1,), U, U)
        b = MomentEngine(gp, kernel_shift=0.5).marginal_second_moment((0,), (1,), U, U)
        np.testing.assert_allclose(b - a, 0.5)

    def test_covariance_symmetries(self, gp):
        W = covariance_of_variances(gp, (0,), (0, 1))
        np.testing.assert_allclose(W, W.transpose(1, 0, 2, 3), atol=1e-15)
        np.testing.assert_allclose(W, W.transpose(0, 1, 3, 2), atol=1e-15)
        W2 = covariance_of_variances(gp, (0, 1), (0,))
        np.testing.assert_allclose(W, W2.transpose(2, 3, 0, 1), atol=1e-14)

    def test_error_terms_are_slices_of_full_tensors(self):
        gp = small_gp(seed=5, n=10, m=2, L=2)
        e = MomentEngine(gp)
        m, full = AxisSet([1], 2), AxisSet.full(2)
        (terms,) = e.error_terms([m])
        ref = error_terms_from_tensors(
            m, e.covariance_of_variances(m, m), e.covariance_of_variances(m, full),
            e.covariance_of_variances(full, full),
        )
        np.testing.assert_allclose(terms.w_mm, ref.w_mm, rtol=1e-12, atol=1e-18)
        np.testing.assert_allclose(terms.w_mM, ref.w_mM, rtol=1e-12, atol=1e-18)
        np.testing.assert_allclose(terms.w_MM, ref.w_MM, rtol=1e-12, atol=1e-18)

    def test_variance_of_variance_is_nonnegative(self, gp):
        e = MomentEngine(gp)
        for m in [(0,), (1,), (0, 1)]:
            W = e.covariance_of_variances(m, m)
            L = W.shape[0]
            for a in range(L):
                assert W[a, a, a, a] >= 0
