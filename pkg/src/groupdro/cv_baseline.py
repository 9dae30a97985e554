"""K-fold cross-validation over a decreasing penalty grid."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_gen import make_rng
from .solvers import (
    Dataset,
    DegenerateFitError,
    SolverOptions,
    fit_grlasso_logistic,
    fit_gsrl_linear,
    lambda_max,
)

MODELS = {"gsrl": "linear", "logistic": "logistic"}
_ALIASES = {"gsrl-linear": "gsrl", "grlasso-logistic": "logistic"}


def _model(model: str | None, data: Dataset) -> str:
    if model is None:
        return "gsrl" if data.task == "linear" else "logistic"
    model = _ALIASES.get(model, model)
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; use 'gsrl' or 'logistic'")
    if MODELS[model] != data.task:
        raise ValueError(f"model {model!r} needs {MODELS[model]} data, got {data.task}")
    return model


@dataclass
class CvResult:
    """Held-out losses on a fold x grid layout.

    Folds skipped because their training part had a single class are
    listed in ``skipped`` and do not appear in ``fold_losses``. A path that
    broke down (interpolating fit) has ``inf`` losses from that point on.
    """

    lambda_grid: np.ndarray
    fold_losses: np.ndarray
    best_lambda: float
    one_se_lambda: float
    folds: np.ndarray = field(repr=False)
    skipped: tuple[int, ...] = ()

    @property
    def mean_loss(self) -> np.ndarray:
        return self.fold_losses.mean(axis=0)

    @property
    def k_effective(self) -> int:
        return self.fold_losses.shape[0]

    @property
    def se_loss(self) -> np.ndarray:
        k = self.k_effective
        if k < 2:
            return np.zeros(self.lambda_grid.size)
        return self.fold_losses.std(axis=0, ddof=1) / math.sqrt(k)


def default_grid(data: Dataset, model: str | None = None, length: int = 50,
                 ratio: float = 1e-3, weights=None, fit_intercept: bool = False) -> np.ndarray:
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    model = _model(model, data)
    if length < 1 or not 0 < ratio < 1:
        raise ValueError("need length >= 1 and 0 < ratio < 1")
    kind = "gsrl" if model == "gsrl" else None
    lmax = lambda_max(data, kind, weights, fit_intercept)
    if not lmax > 0:
        raise ValueError("lambda_max is zero: the null model already fits exactly")
    if length == 1:
        return np.array([lmax])
    return lmax * np.power(ratio, np.arange(length) / (length - 1.0))


def fold_assignment(n: int, k: int, seed) -> np.ndarray:
    """Balanced random fold labels: sizes differ by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.empty(n, dtype=np.intp)
    labels[make_rng(seed).permutation(n)] = np.arange(n) % k
    return labels


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ValueError("grid must be a nonempty list of finite nonnegative values")
    grid = np.sort(grid)[::-1]
    if np.any(np.diff(grid) >= 0):
        raise ValueError("grid entries must be distinct")
    return grid


def holdout_loss(task: str, data: Dataset, beta, intercept: float = 0.0) -> float:
    """Mean squared error (linear) or mean log-exponential loss (logistic)."""
    m = data.X @ beta + intercept
    if task == "linear":
        return float(np.mean((data.y - m) ** 2))
    return float(np.mean(np.logaddexp(0.0, -data.y * m)))


def path_losses(model: str, train: Dataset, test: Dataset, grid, weights=None,
                fit_intercept: bool = False, opts: SolverOptions | None = None) -> np.ndarray:
    """Held-out loss along a warm-started path over ``grid`` (decreasing)."""
    out = np.full(len(grid), np.inf)
    beta, b0 = None, 0.0
    for g, lam in enumerate(grid):
        if model == "gsrl":
            try:
                fit = fit_gsrl_linear(train, lam, opts, weights, beta0=beta,
                                      fit_intercept=fit_intercept)
            except DegenerateFitError:
                break  # smaller penalties interpolate as well
        else:
            fit = fit_grlasso_logistic(train, lam, opts, weights, beta0=beta, intercept0=b0,
                                       fit_intercept=fit_intercept)
        beta, b0 = fit.beta, fit.intercept
        out[g] = holdout_loss(train.task, test, beta, b0)
    return out


def cross_validate(data: Dataset, model: str | None = None, k: int = 5, grid=None, seed=0,
                   weights=None, fit_intercept: bool = False,
                   opts: SolverOptions | None = None, n_jobs: int | None = None) -> CvResult:
    """Choose ``lambda`` by minimum mean held-out loss, ties going to the larger value.

    ``model`` is ``"gsrl"`` (square-root group lasso, squared loss) or
    ``"logistic"`` (group lasso logistic, log-exponential loss); by default
    it follows ``data.task``. ``grid`` defaults to ``default_grid``. Folds
    may be fitted in parallel with ``n_jobs``; the result does not depend on
    it.
    """
    model = _model(model, data)
    grid = default_grid(data, model, weights=weights, fit_intercept=fit_intercept) \
        if grid is None else _check_grid(grid)
    folds = fold_assignment(data.n, k, seed)
    jobs, skipped = [], []
    for f in range(k):
        tr = data.subset(folds != f)
        if model == "logistic" and np.unique(tr.y).size < 2:
            warnings.warn(f"fold {f}: training part has a single class, fold skipped",
                          RuntimeWarning, stacklevel=2)
            skipped.append(f)
            continue
        jobs.append((tr, data.subset(folds == f)))
    if not jobs:
        raise ValueError("every fold was skipped")
    if n_jobs is not None and n_jobs != 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(
            delayed(path_losses)(model, tr, te, grid, weights, fit_intercept, opts)
            for tr, te in jobs
        )
    else:
        rows = [path_losses(model, tr, te, grid, weights, fit_intercept, opts) for tr, te in jobs]
    losses = np.vstack(rows)
    mean = losses.mean(axis=0)
    if not np.any(np.isfinite(mean)):
        raise DegenerateFitError("every fit on the grid interpolated the training folds")
    best = int(np.argmin(mean))  # first minimiser = largest lambda
    kk = losses.shape[0]
    se = losses[:, best].std(ddof=1) / math.sqrt(kk) if kk > 1 else 0.0
    one_se = int(np.flatnonzero(mean <= mean[best] + se)[0])
    return CvResult(grid, losses, float(grid[best]), float(grid[one_se]), folds, tuple(skipped))
