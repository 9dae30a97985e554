"""scikit-learn estimators wrapping the group square-root lasso and
group lasso logistic solvers.

``lam=None`` selects the penalty with the RWPI recipe from the training
data; a number fixes it. ``groups`` is a list of 0-based column lists or a
``GroupPartition``; ``None`` makes every column its own group.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .group_norm import GroupPartition
from .rwpi_select import select_lambda
from .solvers import Dataset, SolverOptions, fit_grlasso_logistic, fit_gsrl_linear


def _partition(groups, d: int) -> GroupPartition:
    if groups is None:
        return GroupPartition.singletons(d)
    if isinstance(groups, GroupPartition):
        part = groups
    else:
        part = GroupPartition(d, [list(g) for g in groups])
    if part.d != d:
        raise ValueError(f"groups cover {part.d} columns, X has {d}")
    return part


class _GroupEstimator(BaseEstimator):
    _task = "linear"

    def __init__(self, groups=None, lam=None, group_weights=None, fit_intercept=True,
                 chi=0.05, n_mc=100_000, random_state=0, tol=1e-8, max_iter=10000):
        self.groups = groups
        self.lam = lam
        self.group_weights = group_weights
        self.fit_intercept = fit_intercept
        self.chi = chi
        self.n_mc = n_mc
        self.random_state = random_state
        self.tol = tol
        self.max_iter = max_iter

    def _fit_dataset(self, data: Dataset):
        opts = SolverOptions(tol=self.tol, max_iter=self.max_iter)
        if self.lam is None:
            self.selection_ = select_lambda(data, self.chi, self.n_mc, self.random_state,
                                            self.group_weights, self.fit_intercept, opts)
            lam = self.selection_.lam
        else:
            if self.lam < 0:
                raise ValueError("lam must be nonnegative")
            self.selection_ = None
            lam = float(self.lam)
        solver = fit_gsrl_linear if self._task == "linear" else fit_grlasso_logistic
        fit = solver(data, lam, opts, self.group_weights, fit_intercept=self.fit_intercept)
        self.fit_ = fit
        self.lambda_ = lam
        self.coef_ = fit.beta
        self.intercept_ = fit.intercept
        self.n_iter_ = fit.iterations
        self.n_features_in_ = data.d
        return self

    def _decision(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class GroupSquareRootLasso(RegressorMixin, _GroupEstimator):
    """Group square-root lasso regressor.

    Minimises ``sqrt(mean((y - X b - b0)^2)) + lam * sum_j w_j ||b_j||_2``
    with ``w_j = sqrt(|G_j|)`` unless ``group_weights`` is given.

    Attributes
    ----------
    coef_, intercept_ : fitted coefficients.
    lambda_ : penalty level used.
    sigma_ : residual root-mean-square at the solution.
    selection_ : ``RwpiSelection`` when ``lam`` is None, else None.
    fit_ : the underlying ``ModelFit``.
    """

    _task = "linear"

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self._fit_dataset(Dataset(X, y, _partition(self.groups, X.shape[1]), "linear"))
        self.sigma_ = self.fit_.sigma_hat
        return self

    def predict(self, X):
        return self._decision(X)


class GroupLassoLogistic(ClassifierMixin, _GroupEstimator):
    """Binary logistic regression with a group lasso penalty.

    Minimises the mean log-exponential loss plus
    ``lam * sum_j w_j ||b_j||_2``. Any two class labels are accepted;
    ``classes_[1]`` is the positive class.
    """

    _task = "logistic"

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_.size}")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self._fit_dataset(Dataset(X, signs, _partition(self.groups, X.shape[1]), "logistic"))
        return self

    def decision_function(self, X):
        return self._decision(X)

    def predict_proba(self, X):
        m = self._decision(X)
        p = np.exp(-np.logaddexp(0.0, -m))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self._decision(X) > 0).astype(int)]
