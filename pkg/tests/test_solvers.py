import math

import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import minimize

from groupdro.group_norm import GroupPartition
from groupdro.solvers import (
    Dataset,
    DegenerateFitError,
    SolverOptions,
    default_weights,
    fit_group_lasso_linear,
    fit_grlasso_logistic,
    fit_gsrl_linear,
    group_prox,
    kkt_violation,
    lambda_max,
    penalized_objective,
    penalty,
)


def _linear(seed, n=30, sizes=(3, 3), noise=1.0):
    rng = np.random.default_rng(seed)
    part = GroupPartition.contiguous(list(sizes))
    X = rng.standard_normal((n, part.d))
    beta = np.zeros(part.d)
    beta[: sizes[0]] = rng.standard_normal(sizes[0])
    return Dataset(X, X @ beta + noise * rng.standard_normal(n), part)


def _logistic(seed, n=40, sizes=(3, 3)):
    rng = np.random.default_rng(seed)
    part = GroupPartition.contiguous(list(sizes))
    X = rng.standard_normal((n, part.d))
    beta = np.zeros(part.d)
    beta[: sizes[0]] = 1.5 * rng.standard_normal(sizes[0])
    y = np.where(rng.random(n) < 1 / (1 + np.exp(-X @ beta)), 1.0, -1.0)
    return Dataset(X, y, part, "logistic")


def _pen(b, data):
    w = default_weights(data.part)
    return sum(w[j] * cp.norm(b[list(g)], 2) for j, g in enumerate(data.part.groups))


def _cvx_value(data, lam, kind, intercept=False):
    b = cp.Variable(data.d)
    b0 = cp.Variable() if intercept else 0.0
    m = data.X @ b + b0
    n = data.n
    if kind == "gsrl":
        loss = cp.norm(data.y - m, 2) / math.sqrt(n)
    elif kind == "group_lasso":
        loss = cp.sum_squares(data.y - m) / n
    else:
        loss = cp.sum(cp.logistic(-cp.multiply(data.y, m))) / n
    prob = cp.Problem(cp.Minimize(loss + lam * _pen(b, data)))
    prob.solve(solver=cp.CLARABEL)
    return prob.value


class TestProx:
    def test_shrinks_block(self):
        part = GroupPartition.singletons(1)
        part = GroupPartition(2, [[0, 1]])
        np.testing.assert_allclose(group_prox([3.0, 4.0], part, [1.0], 1.0), [2.4, 3.2])
        np.testing.assert_array_equal(group_prox([3.0, 4.0], part, [1.0], 10.0), [0.0, 0.0])

    def test_matches_numerical_minimiser(self):
        rng = np.random.default_rng(0)
        part = GroupPartition.contiguous([2, 3, 1])
        w = np.array([1.0, 0.5, 2.0])
        for _ in range(10):
            v = rng.standard_normal(part.d) * 2
            thresh = float(rng.uniform(0.1, 1.5))
            out = group_prox(v, part, w, thresh)
            for j, idx in enumerate(part.index):
                f = lambda u: 0.5 * np.sum((u - v[idx]) ** 2) + thresh * w[j] * np.linalg.norm(u)
                res = minimize(f, v[idx] * 0.5, method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
                # compare objective values; the minimiser of a strongly convex map follows
                assert f(out[idx]) <= res.fun + 1e-12
                np.testing.assert_allclose(out[idx], res.x, atol=1e-6)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            group_prox([1.0], GroupPartition.singletons(1), [1.0], -1.0)


class TestGroupLassoLinear:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_convex_oracle(self, seed):
        data = _linear(seed)
        for lam in (0.01, 0.1, 0.5):
            fit = fit_group_lasso_linear(data, lam)
            assert fit.converged
            assert fit.objective == pytest.approx(_cvx_value(data, lam, "group_lasso"), abs=1e-5)

    def test_zero_penalty_is_least_squares(self):
        data = _linear(1, n=40)
        fit = fit_group_lasso_linear(data, 0.0)
        np.testing.assert_allclose(fit.beta, np.linalg.lstsq(data.X, data.y, rcond=None)[0], atol=1e-6)

    def test_lambda_max_gives_zero(self):
        data = _linear(2)
        lmax = lambda_max(data, "group_lasso")
        assert np.all(fit_group_lasso_linear(data, lmax * 1.0001).beta == 0.0)
        assert np.any(fit_group_lasso_linear(data, lmax * 0.95).beta != 0.0)

    def test_monotone_descent(self):
        fit = fit_group_lasso_linear(_linear(3), 0.05)
        assert np.all(np.diff(fit.history) <= 1e-12)


class TestGsrl:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_convex_oracle(self, seed):
        data = _linear(seed)
        for lam in (0.02, 0.1, 0.3):
            fit = fit_gsrl_linear(data, lam)
            assert fit.converged
            assert fit.objective == pytest.approx(_cvx_value(data, lam, "gsrl"), abs=1e-5)
            assert kkt_violation(data, fit) <= 1e-6

    def test_intercept_matches_oracle(self):
        data = _linear(4)
        data = Dataset(data.X, data.y + 3.0, data.part)
        fit = fit_gsrl_linear(data, 0.1, fit_intercept=True)
        assert fit.objective == pytest.approx(_cvx_value(data, 0.1, "gsrl", intercept=True), abs=1e-5)
        assert fit.intercept == pytest.approx(3.0, abs=0.5)

    def test_sigma_is_rmse(self):
        data = _linear(5)
        fit = fit_gsrl_linear(data, 0.1)
        r = data.y - data.X @ fit.beta
        assert fit.sigma_hat == pytest.approx(math.sqrt(np.mean(r * r)), rel=1e-12)

    def test_zero_penalty_is_least_squares(self):
        data = _linear(6, n=40)
        fit = fit_gsrl_linear(data, 0.0)
        np.testing.assert_allclose(fit.beta, np.linalg.lstsq(data.X, data.y, rcond=None)[0], atol=1e-6)

    def test_singleton_groups_match_sqrt_lasso(self):
        rng = np.random.default_rng(7)
        n, d = 25, 8
        X = rng.standard_normal((n, d))
        y = X[:, 0] - 2 * X[:, 3] + rng.standard_normal(n)
        data = Dataset(X, y, GroupPartition.singletons(d))
        for lam in (0.05, 0.2):
            b = cp.Variable(d)
            prob = cp.Problem(cp.Minimize(cp.norm(y - X @ b, 2) / math.sqrt(n) + lam * cp.norm(b, 1)))
            prob.solve(solver=cp.CLARABEL)
            assert fit_gsrl_linear(data, lam).objective == pytest.approx(prob.value, abs=1e-5)

    def test_exact_fit_raises(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((5, 8))
        data = Dataset(X, X @ rng.standard_normal(8), GroupPartition.contiguous([4, 4]))
        with pytest.raises(DegenerateFitError):
            fit_gsrl_linear(data, 1e-6)

    def test_lambda_max_gives_zero(self):
        data = _linear(9)
        lmax = lambda_max(data)
        assert np.all(fit_gsrl_linear(data, lmax * 1.0001).beta == 0.0)
        assert np.any(fit_gsrl_linear(data, lmax * 0.95).beta != 0.0)

    def test_path_penalty_monotone(self):
        data = _linear(10)
        grid = lambda_max(data) * np.geomspace(1, 0.01, 10)
        norms = [penalty(fit_gsrl_linear(data, lam).beta, data.part) for lam in grid]
        assert np.all(np.diff(norms) >= -1e-8)

    def test_group_scaling(self):
        data = _linear(11)
        fit = fit_gsrl_linear(data, 0.1)
        c = 3.0
        X = data.X.copy()
        X[:, :3] *= c
        w = default_weights(data.part).copy()
        w[0] *= c  # keep the penalty on the rescaled block equivalent
        scaled = Dataset(X, data.y, data.part)
        beta0 = fit.beta.copy()
        beta0[:3] /= c
        refit = fit_gsrl_linear(scaled, 0.1, weights=w, beta0=beta0)
        assert refit.objective == pytest.approx(fit.objective, abs=1e-8)
        np.testing.assert_allclose(refit.beta[:3], fit.beta[:3] / c, atol=1e-6)

    def test_objective_recomputes(self):
        data = _linear(12)
        fit = fit_gsrl_linear(data, 0.1)
        assert penalized_objective(data, fit.beta, 0.1) == pytest.approx(fit.objective, abs=1e-12)
        assert penalized_objective(data, np.zeros(data.d), 0.1) == pytest.approx(
            math.sqrt(np.mean(data.y**2)))


class TestLogistic:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_convex_oracle(self, seed):
        data = _logistic(seed)
        for lam in (0.01, 0.05, 0.2):
            fit = fit_grlasso_logistic(data, lam)
            assert fit.converged
            assert fit.objective == pytest.approx(_cvx_value(data, lam, "logistic"), abs=1e-5)
            assert kkt_violation(data, fit) <= 1e-6

    def test_intercept_matches_oracle(self):
        data = _logistic(3)
        fit = fit_grlasso_logistic(data, 0.03, fit_intercept=True)
        assert fit.objective == pytest.approx(_cvx_value(data, 0.03, "logistic", True), abs=1e-5)

    def test_large_penalty_gives_log2(self):
        data = _logistic(4)
        fit = fit_grlasso_logistic(data, 1e6)
        assert np.all(fit.beta == 0.0)
        assert fit.objective == pytest.approx(math.log(2.0), abs=1e-12)

    def test_label_flip_negates(self):
        data = _logistic(5)
        flipped = Dataset(data.X, -data.y, data.part, "logistic")
        a = fit_grlasso_logistic(data, 0.05)
        b = fit_grlasso_logistic(flipped, 0.05)
        np.testing.assert_allclose(b.beta, -a.beta, atol=1e-8)

    def test_separable_unpenalised_not_converged(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((20, 2))
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        data = Dataset(X, y, GroupPartition.singletons(2), "logistic")
        fit = fit_grlasso_logistic(data, 0.0, SolverOptions(max_iter=300))
        assert not fit.converged

    def test_monotone_descent(self):
        fit = fit_grlasso_logistic(_logistic(7), 0.02)
        assert np.all(np.diff(fit.history) <= 1e-12)

    def test_lambda_max(self):
        data = _logistic(8)
        lmax = lambda_max(data)
        assert np.all(fit_grlasso_logistic(data, lmax * 1.0001).beta == 0.0)
        assert np.any(fit_grlasso_logistic(data, lmax * 0.95).beta != 0.0)


class TestDataset:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            Dataset(np.array([[np.nan]]), [1.0], GroupPartition.singletons(1))

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match="-1 or \\+1"):
            Dataset(np.ones((2, 1)), [0.0, 1.0], GroupPartition.singletons(1), "logistic")

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 2)), [1.0], GroupPartition.singletons(2))

    def test_options_positive(self):
        with pytest.raises(ValueError):
            SolverOptions(tol=0)
