import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from groupdro import GroupLassoLogistic, GroupSquareRootLasso
from groupdro.group_norm import GroupPartition
from groupdro.rwpi_select import select_lambda
from groupdro.solvers import Dataset, fit_grlasso_logistic, fit_gsrl_linear

GROUPS = [[0, 1, 2], [3, 4, 5]]


def _xy(seed, n=80, logistic=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 6))
    m = X @ np.array([1.0, -1.0, 0.5, 0, 0, 0]) + 2.0
    if logistic:
        return X, np.where(rng.random(n) < 1 / (1 + np.exp(-m)), "yes", "no")
    return X, m + rng.standard_normal(n)


class TestRegressor:
    def test_matches_solver(self):
        X, y = _xy(0)
        est = GroupSquareRootLasso(groups=GROUPS, lam=0.1).fit(X, y)
        fit = fit_gsrl_linear(Dataset(X, y, GroupPartition(6, GROUPS)), 0.1, fit_intercept=True)
        np.testing.assert_allclose(est.coef_, fit.beta, atol=1e-10)
        assert est.intercept_ == pytest.approx(fit.intercept)
        assert est.sigma_ == pytest.approx(fit.sigma_hat)
        np.testing.assert_allclose(est.predict(X), X @ est.coef_ + est.intercept_)

    def test_rwpi_default(self):
        X, y = _xy(1)
        est = GroupSquareRootLasso(groups=GROUPS, n_mc=5000, random_state=3).fit(X, y)
        sel = select_lambda(Dataset(X, y, GroupPartition(6, GROUPS)), 0.05, 5000, 3,
                            fit_intercept=True)
        assert est.lambda_ == sel.lam
        assert est.selection_.lam == sel.lam

    def test_default_groups_are_singletons(self):
        X, y = _xy(2)
        est = GroupSquareRootLasso(lam=0.05).fit(X, y)
        assert est.fit_.weights.tolist() == [1.0] * 6

    def test_clone_and_params(self):
        est = GroupSquareRootLasso(groups=GROUPS, lam=0.2, chi=0.1)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin.set_params(lam=0.3).lam == 0.3

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            GroupSquareRootLasso().predict(np.ones((1, 2)))

    def test_feature_count_checked(self):
        X, y = _xy(3)
        est = GroupSquareRootLasso(groups=GROUPS, lam=0.1).fit(X, y)
        with pytest.raises(ValueError):
            est.predict(X[:, :5])

    def test_bad_groups(self):
        X, y = _xy(4)
        with pytest.raises(ValueError):
            GroupSquareRootLasso(groups=[[0, 1]], lam=0.1).fit(X, y)
        with pytest.raises(ValueError):
            GroupSquareRootLasso(groups=GROUPS, lam=-1.0).fit(X, y)

    def test_cross_val_score(self):
        X, y = _xy(5)
        scores = cross_val_score(GroupSquareRootLasso(groups=GROUPS, lam=0.05), X, y, cv=3)
        assert np.all(scores > 0.5)


class TestClassifier:
    def test_label_mapping(self):
        X, y = _xy(6, logistic=True)
        est = GroupLassoLogistic(groups=GROUPS, lam=0.02).fit(X, y)
        assert est.classes_.tolist() == ["no", "yes"]
        signs = np.where(y == "yes", 1.0, -1.0)
        fit = fit_grlasso_logistic(Dataset(X, signs, GroupPartition(6, GROUPS), "logistic"), 0.02,
                                   fit_intercept=True)
        np.testing.assert_allclose(est.coef_, fit.beta, atol=1e-8)
        proba = est.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert np.array_equal(est.predict(X), np.where(proba[:, 1] > 0.5, "yes", "no"))
        assert est.score(X, y) > 0.7

    def test_rwpi_default(self):
        X, y = _xy(7, logistic=True)
        est = GroupLassoLogistic(groups=GROUPS, n_mc=5000).fit(X, y)
        assert est.selection_ is not None and est.lambda_ == est.selection_.lam > 0

    def test_needs_two_classes(self):
        X, _ = _xy(8)
        with pytest.raises(ValueError):
            GroupLassoLogistic(lam=0.1).fit(X, np.zeros(len(X)))
        with pytest.raises(ValueError):
            GroupLassoLogistic(lam=0.1).fit(X, np.arange(len(X)) % 3)
