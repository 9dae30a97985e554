import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import chi2, norm

from groupdro.data_gen import SimulationConfig, simulate
from groupdro.group_norm import GroupPartition, NormSpec, dual_spec
from groupdro.rwpi_select import (
    DegenerateErrorsError,
    ErrorMoments,
    estimate_covariance,
    estimate_error_moments,
    lambda_linear,
    lambda_logistic,
    psd_factor,
    quantile,
    quantile_se,
    sample_dual_gaussian_norm,
    sample_L1,
    sample_L2,
    select_lambda,
)
from groupdro.solvers import Dataset, ModelFit


def chi_max_quantile(level, g, groups):
    """Quantile of max_i chi_g / sqrt(g) over independent groups."""
    return brentq(lambda x: chi2.cdf(g * x * x, g) ** groups - level, 1e-9, 50.0)


class TestCovariance:
    def test_identical_rows(self):
        np.testing.assert_array_equal(estimate_covariance(np.ones((5, 3))), np.zeros((3, 3)))

    def test_two_points(self):
        assert estimate_covariance([[0.0], [2.0]])[0, 0] == pytest.approx(1.0)

    def test_large_sample_near_identity(self):
        n = 20000
        X = np.random.default_rng(0).standard_normal((n, 4))
        cov = estimate_covariance(X)
        off = cov[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off) <= 3 / math.sqrt(n))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            estimate_covariance(np.ones((1, 3)))

    def test_factor_rejects_indefinite(self):
        with pytest.raises(np.linalg.LinAlgError):
            psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_factor_squares_back(self):
        A = np.random.default_rng(1).standard_normal((4, 2))
        cov = A @ A.T  # rank deficient
        F = psd_factor(cov)
        np.testing.assert_allclose(F @ F, cov, atol=1e-10)


class TestSampler:
    def test_half_normal_quantile(self):
        part = GroupPartition.singletons(1)
        s = sample_dual_gaussian_norm(np.eye(1), part, NormSpec([1.0], 2.0, math.inf), 100_000, 3)
        assert abs(s.quantile(0.95) - norm.ppf(0.975)) <= 3 * s.quantile_se(0.95)

    def test_zero_covariance(self):
        part = GroupPartition.contiguous([2, 2])
        s = sample_dual_gaussian_norm(np.zeros((4, 4)), part, NormSpec([1.0, 1.0]), 1000, 0)
        assert np.all(s.draws == 0.0)

    def test_independent_chi_oracle(self):
        g, groups = 3, 4
        part = GroupPartition.contiguous([g] * groups)
        dual = dual_spec(NormSpec.group_lasso(part))
        s = sample_dual_gaussian_norm(np.eye(g * groups), part, dual, 50_000, 11)
        for level in (0.5, 0.9):
            assert abs(s.quantile(level) - chi_max_quantile(level, g, groups)) <= 3 * s.quantile_se(level)

    def test_deterministic_and_chunk_free(self):
        part = GroupPartition.contiguous([2, 1])
        cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])
        a = sample_dual_gaussian_norm(cov, part, NormSpec([1.0, 2.0]), 25_000, 5)
        b = sample_dual_gaussian_norm(cov, part, NormSpec([1.0, 2.0]), 25_000, 5)
        np.testing.assert_array_equal(a.draws, b.draws)
        c = sample_dual_gaussian_norm(cov, part, NormSpec([1.0, 2.0]), 25_000, 6)
        assert not np.array_equal(a.draws, c.draws)

    def test_squared(self):
        part = GroupPartition.singletons(2)
        spec = NormSpec([1.0, 1.0])
        a = sample_dual_gaussian_norm(np.eye(2), part, spec, 100, 0)
        b = sample_dual_gaussian_norm(np.eye(2), part, spec, 100, 0, squared=True)
        np.testing.assert_allclose(b.draws, a.draws**2)
        assert (a.law, b.law) == ("L4", "L2")


def test_quantile_is_order_statistic():
    x = np.arange(1, 101, dtype=float)
    assert quantile(x, 0.95) == 95.0
    assert quantile(x, 0.951) == 96.0
    assert quantile_se(x, 0.5) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        quantile(x, 1.0)


class TestFormulas:
    def test_lambda_linear_gaussian(self):
        lam = lambda_linear(4.0, 100, math.sqrt(2 / math.pi), 1.0)
        assert lam == pytest.approx(2 / math.sqrt(100 * (1 - 2 / math.pi)), rel=1e-12)
        assert lam == pytest.approx(0.33178, abs=5e-6)

    def test_lambda_linear_heavy_spread_limit(self):
        assert lambda_linear(9.0, 25, 1e-9, 1.0) == pytest.approx(math.sqrt(9 / 25), rel=1e-12)

    def test_lambda_linear_rademacher_raises(self):
        with pytest.raises(DegenerateErrorsError):
            lambda_linear(1.0, 10, 1.0, 1.0)

    def test_lambda_linear_scale_free(self):
        r = np.random.default_rng(0).standard_normal(200)
        base = lambda_linear(3.0, 200, np.mean(np.abs(r)), np.mean(r * r))
        r5 = 5 * r
        assert lambda_linear(3.0, 200, np.mean(np.abs(r5)), np.mean(r5 * r5)) == pytest.approx(base, rel=1e-12)

    def test_lambda_logistic(self):
        assert lambda_logistic(2.0, 4) == 1.0
        assert lambda_logistic(0.0, 7) == 0.0
        assert lambda_logistic(3.0, 10000) == pytest.approx(0.03)


class TestMoments:
    def _data(self, r):
        part = GroupPartition.singletons(1)
        return Dataset(np.zeros((len(r), 1)), r, part)

    def test_exact_fit_degenerate(self):
        m = estimate_error_moments(self._data([0.0, 0.0]), ModelFit(np.zeros(1), 0.0))
        assert (m.mean_abs, m.mean_sq) == (0.0, 0.0)
        assert m.degenerate

    def test_plus_minus_one(self):
        m = estimate_error_moments(self._data([-1.0, 1.0]), ModelFit(np.zeros(1), 0.0))
        assert (m.mean_abs, m.mean_sq) == (1.0, 1.0)

    def test_gaussian_ratio(self):
        r = np.random.default_rng(1).standard_normal(200_000)
        m = estimate_error_moments(self._data(r), ModelFit(np.zeros(1), 0.0))
        assert m.ratio == pytest.approx(2 / math.pi, abs=5e-3)

    def test_ratio_guard(self):
        assert ErrorMoments(0.0, 0.0).ratio == 1.0


class TestSelect:
    def test_logistic_one_dimensional(self):
        rng = np.random.default_rng(2)
        n = 100
        x = rng.standard_normal(n)
        x = (x - x.mean()) / x.std()  # sample variance exactly 1
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        data = Dataset(x[:, None], y, GroupPartition.singletons(1), "logistic")
        sel = select_lambda(data, 0.05, 100_000, 0)
        assert abs(sel.lam - 1.960 / 10) <= 3 * sel.eta_se / 10

    def test_exact_linear_data_raises(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((60, 6))
        data = Dataset(X, X @ np.array([1.0, 2, 0, 0, 0, 1]), GroupPartition.contiguous([3, 3]))
        with pytest.raises(DegenerateErrorsError):
            select_lambda(data, n_mc=2000)

    def test_deterministic(self):
        sim = simulate(SimulationConfig(n=80, seed=4, n_covariates=4, active_groups=(1, 2)))
        a = select_lambda(sim.data, n_mc=5000, seed=9)
        b = select_lambda(sim.data, n_mc=5000, seed=9)
        assert a.lam == b.lam
        assert len(a.pilot_lambdas) == 2

    def test_chi_bounds(self):
        sim = simulate(SimulationConfig(n=30, seed=0, n_covariates=2, active_groups=(1, 2)))
        with pytest.raises(ValueError):
            select_lambda(sim.data, chi=1.0)

    def test_smaller_chi_larger_lambda(self):
        sim = simulate(SimulationConfig(n=100, seed=5, n_covariates=3, active_groups=(1, 2), task="logistic"))
        lo = select_lambda(sim.data, chi=0.2, n_mc=20_000).lam
        hi = select_lambda(sim.data, chi=0.01, n_mc=20_000).lam
        assert hi > lo


class TestL1:
    def test_zero_beta_reduces_to_dual_norm(self):
        # with beta* = 0 the inner maximum is ||Z||_*^2 exactly
        rng = np.random.default_rng(6)
        part = GroupPartition.contiguous([2, 2])
        spec = NormSpec.group_lasso(part)
        X = rng.standard_normal((300, 4))
        e = rng.standard_normal(300)
        cov = estimate_covariance(X)
        l1 = sample_L1(np.zeros(4), e, X, part, spec, 200, 1, cov=cov)
        base = sample_dual_gaussian_norm(cov, part, dual_spec(spec), 200, 1, squared=True)
        assert l1.converged.all()
        np.testing.assert_allclose(l1.draws, base.draws, rtol=1e-6)

    def test_matches_generic_maximiser(self):
        from scipy.optimize import minimize

        rng = np.random.default_rng(7)
        part = GroupPartition.contiguous([2, 1])
        spec = NormSpec.group_lasso(part)
        X = rng.standard_normal((40, 3))
        e = rng.standard_normal(40)
        beta = np.array([1.0, -0.5, 0.3])
        l1 = sample_L1(beta, e, X, part, spec, 5, 2)
        sigma = math.sqrt(np.mean(e * e))
        from groupdro.rwpi_select import gaussian_chunks

        Z = next(gaussian_chunks(estimate_covariance(X), 5, 2))
        from groupdro.group_norm import group_norm

        for b in range(5):
            def neg(z):
                V = e[:, None] * z[None, :] - (X @ z)[:, None] * beta[None, :]
                nv = group_norm(V, part, spec)
                return -(2 * sigma * z @ Z[b] - np.mean(nv * nv))

            best = min(minimize(neg, s, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000}).fun
                       for s in (np.zeros(3), Z[b] * 0.1))
            assert l1.draws[b] == pytest.approx(-best, rel=1e-5, abs=1e-9)

    def test_general_spec_fallback_is_lower_bound_of_l2(self):
        rng = np.random.default_rng(8)
        part = GroupPartition.contiguous([2, 2])
        spec = NormSpec([1.0, 1.0], 3.0, 2.0)
        X = rng.standard_normal((20, 4))
        e = rng.standard_normal(20)
        l1 = sample_L1(np.zeros(4), e, X, part, spec, 3, 0, max_iter=150)
        l2 = sample_L2(estimate_covariance(X), part, spec, np.mean(np.abs(e)), np.mean(e * e), 3, 0)
        assert np.all(l1.draws > 0)
        assert np.all(l1.draws <= l2.draws + 1e-9)

    def test_input_validation(self):
        part = GroupPartition.singletons(2)
        with pytest.raises(ValueError):
            sample_L1(np.zeros(2), [], np.ones((0, 2)), part, NormSpec([1.0, 1.0]))
