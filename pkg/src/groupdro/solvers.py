"""Group Lasso type solvers for the sqrt(g)-(2, 1) penalty family.

Three estimators share one penalty ``lam * sum_j w_j ||beta(G_j)||_2``
(``w_j = sqrt(g_j)`` unless given):

* ``fit_group_lasso_linear``: ``(1/n)||y - X beta||^2 + penalty`` by exact
  block coordinate descent.
* ``fit_gsrl_linear``: ``sqrt((1/n)||y - X beta||^2) + penalty`` (group
  square-root lasso) by block coordinate descent that refreshes the noise
  level after every sweep.
* ``fit_grlasso_logistic``: mean log-exponential loss ``+ penalty`` by
  monotone accelerated proximal gradient with backtracking.

Linear responses are real; logistic responses are -1/+1. Columns are never
rescaled here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .group_norm import GroupPartition

TASKS = ("linear", "logistic")
# iterations between Newton refinements on the active groups
POLISH_EVERY = 10
# residual scale, relative to that of the null model, treated as interpolation
INTERPOLATION_RTOL = 1e-6


class DegenerateFitError(ArithmeticError):
    """The residual scale collapsed to zero (the model interpolates the data)."""


@dataclass
class Dataset:
    """Predictors, responses, group structure and task kind."""

    X: np.ndarray
    y: np.ndarray
    part: GroupPartition
    task: str = "linear"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        n, d = self.X.shape
        if n < 1:
            raise ValueError("dataset needs at least one row")
        if self.y.shape[0] != n:
            raise ValueError(f"X has {n} rows but y has {self.y.shape[0]} entries")
        if self.part.d != d:
            raise ValueError(f"partition covers {self.part.d} predictors, X has {d}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("data contains NaN or Inf")
        if self.task == "logistic" and not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("logistic responses must be -1 or +1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.part, self.task)


@dataclass
class SolverOptions:
    """Stopping rules.

    ``tol`` bounds the relative objective decrease of a converged sweep and
    ``kkt_tol`` the final optimality residual. ``outer_tol`` is the relative
    change in the noise level allowed at convergence of the square-root
    lasso. That solver refreshes the noise level every sweep, so
    ``max_iter`` caps it and ``outer_max_iter`` is accepted for
    configuration compatibility only.
    """

    tol: float = 1e-8
    max_iter: int = 10000
    outer_tol: float = 1e-6
    outer_max_iter: int = 100
    kkt_tol: float = 1e-6

    def __post_init__(self):
        for name in ("tol", "max_iter", "outer_tol", "outer_max_iter", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ModelFit:
    """Result of a penalised fit.

    ``objective`` is the penalised objective at ``beta`` (see
    ``penalized_objective``); ``history`` holds the objective after every
    sweep or iteration.
    """

    beta: np.ndarray
    lam: float
    intercept: float = 0.0
    sigma_hat: float | None = None
    iterations: int = 0
    converged: bool = False
    objective: float = math.nan
    weights: np.ndarray | None = None
    history: list = field(default_factory=list, repr=False)
    kind: str = "group_lasso"


def default_weights(part: GroupPartition) -> np.ndarray:
    return np.sqrt(part.sizes.astype(float))


def _weights(part: GroupPartition, weights) -> np.ndarray:
    if weights is None:
        return default_weights(part)
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != part.n_groups:
        raise ValueError(f"need {part.n_groups} group weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("group weights must be finite and nonnegative")
    return w


def penalty(beta, part: GroupPartition, weights=None) -> float:
    """``sum_j w_j ||beta(G_j)||_2``."""
    return float(_weights(part, weights) @ part.block_norms(beta, 2.0))


def group_prox(v, part: GroupPartition, weights, thresh: float) -> np.ndarray:
    """Proximal map of ``thresh * sum_j weights_j ||u(G_j)||_2``.

    Each block is shrunk towards zero by ``thresh * weights_j`` in Euclidean
    length, and zeroed when it is shorter than that.
    """
    v = np.asarray(v, dtype=float)
    w = _weights(part, weights)
    if thresh < 0:
        raise ValueError("thresh must be nonnegative")
    out = np.zeros_like(v)
    norms = part.block_norms(v, 2.0)
    for j, idx in enumerate(part.index):
        if norms[j] > thresh * w[j]:
            out[idx] = (1.0 - thresh * w[j] / norms[j]) * v[idx]
    return out


def _check_task(data: Dataset, task: str):
    if data.task != task:
        raise ValueError(f"expected a {task} dataset, got {data.task}")


def _logloss(margin: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, -margin)))


def penalized_objective(
    data: Dataset, beta, lam: float, weights=None, intercept: float = 0.0, loss: str = "sqrt"
) -> float:
    """Penalised objective as minimised by the solvers.

    For linear data ``loss="sqrt"`` gives the square-root lasso objective
    ``sqrt(MSE) + lam * penalty`` and ``loss="squared"`` the group lasso
    objective ``MSE + lam * penalty``. Logistic data always uses the mean
    log-exponential loss.
    """
    beta = np.asarray(beta, dtype=float)
    pen = lam * penalty(beta, data.part, weights) if lam else 0.0
    fitted = data.X @ beta + intercept
    if data.task == "logistic":
        return _logloss(data.y * fitted) + pen
    mse = float(np.mean((data.y - fitted) ** 2))
    if loss == "sqrt":
        return math.sqrt(mse) + pen
    if loss == "squared":
        return mse + pen
    raise ValueError(f"unknown loss {loss!r}")


# -- linear: exact block coordinate descent --------------------------------


def _block_solve(z: np.ndarray, evals, evecs: np.ndarray, mu: float) -> np.ndarray:
    """argmin_b 0.5 b'Hb - z'b + mu ||b||_2 with H = V diag(evals) V'.

    ``evals`` is a list of floats; small blocks make scalar math faster than
    numpy here.
    """
    zn = math.sqrt(float(z @ z))
    if zn <= mu * (1.0 + 1e-12):  # rounding slack so that lam = lambda_max gives zero
        return np.zeros_like(z)
    zh = (evecs.T @ z).tolist()
    top = max(max(evals), 1e-300)
    keep = [e > 1e-12 * top for e in evals]
    if mu == 0.0:
        coef = [zk / e if k else 0.0 for zk, e, k in zip(zh, evals, keep)]
        return evecs @ np.array(coef)
    pairs = [(zk * zk, e) for zk, e, k in zip(zh, evals, keep) if k and zk != 0.0]
    if not pairs:
        return np.zeros_like(z)
    # Newton on g(tau) = 1/sqrt(S(tau)) - 1, S(tau) = sum c/(e tau + mu)^2.
    # g is concave increasing with g(0) < 0, so iterates rise monotonically.
    tau = 0.0
    for _ in range(100):
        S = dS = 0.0
        for c, e in pairs:
            inv = 1.0 / (e * tau + mu)
            t2 = c * inv * inv
            S += t2
            dS += t2 * e * inv
        step = (math.sqrt(S) - 1.0) * S / dS
        tau += step
        if abs(step) <= 1e-15 * tau:
            break
    coef = [zk * tau / (e * tau + mu) if k else 0.0 for zk, e, k in zip(zh, evals, keep)]
    return evecs @ np.array(coef)


class _GramProblem:
    """Sufficient statistics of a (centred) linear least-squares problem."""

    def __init__(self, data: Dataset, fit_intercept: bool):
        X, y = data.X, data.y
        if fit_intercept:
            self.x_mean, self.y_mean = X.mean(axis=0), float(y.mean())
            X, y = X - self.x_mean, y - self.y_mean
        else:
            self.x_mean, self.y_mean = np.zeros(X.shape[1]), 0.0
        self.X, self.y, self.n = X, y, X.shape[0]
        self.part = data.part
        # every response can be matched exactly when X spans the residual space
        dof = self.n - (1 if fit_intercept else 0)
        self.can_interpolate = dof <= 0 or np.linalg.matrix_rank(X) >= dof
        self.G = X.T @ X / self.n
        self.c = X.T @ y / self.n
        self.blocks = []
        for idx in data.part.index:
            Gjj = self.G[np.ix_(idx, idx)]
            evals, evecs = np.linalg.eigh(2.0 * Gjj)
            self.blocks.append((idx, Gjj, np.clip(evals, 0.0, None).tolist(), evecs, self.G[:, idx]))

    def mse(self, beta: np.ndarray) -> float:
        r = self.y - self.X @ beta
        return float(r @ r) / self.n

    def intercept(self, beta: np.ndarray) -> float:
        return self.y_mean - float(self.x_mean @ beta)

    def smooth(self, scaled: bool):
        """Loss callback for ``_newton_polish``: MSE, or its square root."""
        def fun(beta, order=2):
            mse = self.mse(beta)
            if order == 0:
                return math.sqrt(mse) if scaled else mse
            g = self.G @ beta - self.c
            if not scaled:
                return mse, 2.0 * g, 2.0 * self.G
            sigma = math.sqrt(mse)
            return sigma, g / sigma, self.G / sigma - np.outer(g, g) / sigma**3
        return fun


def _kkt_violation(grad: np.ndarray, beta: np.ndarray, part: GroupPartition, mus: np.ndarray) -> float:
    """Largest group KKT violation for min f + sum mu_j ||b_j||; ``grad`` = grad f."""
    bn = part.block_norms(beta, 2.0)
    nz = bn > 0
    scale = np.where(nz, mus / np.where(nz, bn, 1.0), 0.0)
    shifted = part.block_norms(grad + scale[part._labels] * beta, 2.0)
    gn = part.block_norms(grad, 2.0)
    viol = np.where(nz, shifted, np.maximum(0.0, gn - mus))
    return float(viol.max())


def _newton_polish(smooth, theta, part: GroupPartition, mus, extra=(), max_iter: int = 50):
    """Newton's method on the groups that are currently nonzero.

    Minimises ``f(theta) + sum_j mus_j ||theta_j||`` over the nonzero groups
    (plus the unpenalised coordinates ``extra``) with all other groups held
    at zero; there the objective is smooth. ``smooth`` returns the value,
    gradient and Hessian of ``f``. Steps are Armijo-backtracked, and the run
    stops early if a group heads for zero, where first-order sweeps do
    better. Returns ``(theta, F)``; ``theta`` is unchanged if nothing
    improved.
    """
    norms = part.block_norms(theta[: part.d], 2.0)
    active = [j for j in range(part.n_groups) if norms[j] > 0]
    if not active:
        return theta, None
    idx = [part.index[j] for j in active]
    coords = np.concatenate(idx + [np.asarray(extra, dtype=np.intp)])
    pos, start = [], 0
    for ix in idx:
        pos.append(np.arange(start, start + ix.size))
        start += ix.size
    act_mus = np.asarray(mus)[active]

    def total(th):
        f = smooth(th, order=0)
        return f + float(act_mus @ np.array([math.sqrt(float(th[ix] @ th[ix])) for ix in idx]))

    F0 = total(theta)
    best, Fbest = theta, F0
    for _ in range(max_iter):
        f, g, H = smooth(best, order=2)
        sub = best[coords]
        grad = g[coords].copy()
        hess = H[np.ix_(coords, coords)].copy()
        for ps, m in zip(pos, act_mus):
            b = sub[ps]
            bn = math.sqrt(float(b @ b))
            u = b / bn
            grad[ps] += m * u
            hess[np.ix_(ps, ps)] += (m / bn) * (np.eye(ps.size) - np.outer(u, u))
        ridge = 1e-12 * max(float(np.trace(hess)) / hess.shape[0], 1e-300)
        try:
            step = -np.linalg.solve(hess + ridge * np.eye(hess.shape[0]), grad)
        except np.linalg.LinAlgError:
            break
        slope = float(grad @ step)
        if not slope < 0:
            break
        t = 1.0
        while t > 1e-10:
            cand = best.copy()
            cand[coords] = sub + t * step
            Fc = total(cand)
            if Fc <= Fbest + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        shrunk = any(
            math.sqrt(float(cand[ix] @ cand[ix])) < 1e-6 * math.sqrt(float(best[ix] @ best[ix]))
            for ix in idx
        )
        gain = Fbest - Fc
        best, Fbest = cand, Fc
        if shrunk or gain <= 1e-15 * max(1.0, abs(Fbest)):
            break
    if Fbest < F0:
        return best, Fbest
    return theta, None


def _bcd(prob: _GramProblem, lam: float, w: np.ndarray, beta: np.ndarray, opts: SolverOptions,
         scaled: bool = False):
    """Exact block coordinate descent with an active-set strategy.

    Sweeps cycle over the currently nonzero groups; once they stall, a full
    sweep over every group either certifies the KKT conditions or re-opens
    the active set. Every ``POLISH_EVERY`` sweeps that still made progress,
    Newton's method on the nonzero groups is tried and kept if it lowers
    the objective; this rescues the ill-conditioned end of a path where
    coordinate descent crawls.

    With ``scaled`` the square-root objective ``sqrt(MSE) + lam * penalty``
    is minimised instead: the noise level ``sigma = sqrt(MSE)`` is refreshed
    after every sweep and each block update uses penalty level
    ``2 * lam * sigma``. This is coordinate descent on the jointly convex
    ``MSE / (2 sigma) + sigma / 2 + lam * penalty``, so the objective still
    never increases.
    """
    part = prob.part
    beta = beta.copy()
    half_grad = prob.c - prob.G @ beta  # X'r / n
    sigma = math.sqrt(prob.mse(beta))
    if scaled and sigma < 1e-12:
        raise DegenerateFitError("initial residual is zero")
    # Below the interpolation threshold sigma only creeps towards zero, so
    # on designs that can interpolate a relative collapse already counts.
    floor = 1e-12
    if scaled and prob.can_interpolate:
        floor = max(floor, INTERPOLATION_RTOL * math.sqrt(float(prob.y @ prob.y) / prob.n))

    def objective(b, mse):
        pen = lam * float(w @ part.block_norms(b, 2.0))
        return (math.sqrt(mse) if scaled else mse) + pen

    obj = objective(beta, sigma * sigma)
    mus = (2.0 * sigma if scaled else 1.0) * lam * w
    history = [obj]
    converged = False
    everything = range(len(prob.blocks))
    sweep = everything
    it = 0
    for it in range(1, opts.max_iter + 1):
        full = sweep is everything
        for j in sweep:
            idx, Gjj, evals, evecs, Gcols = prob.blocks[j]
            bj = beta[idx]
            z = 2.0 * (half_grad[idx] + Gjj @ bj)
            new = _block_solve(z, evals, evecs, mus[j])
            delta = new - bj
            if delta.any():
                beta[idx] = new
                half_grad -= Gcols @ delta
        mse = prob.mse(beta)
        new_obj = objective(beta, mse)
        history.append(new_obj)
        decrease = obj - new_obj
        obj = new_obj
        stalled = decrease <= opts.tol * max(1.0, abs(obj))
        if scaled:
            new_sigma = math.sqrt(mse)
            if new_sigma < floor:
                raise DegenerateFitError(
                    "residual scale collapsed to zero; the fit interpolates the data"
                )
            stalled = stalled and abs(new_sigma - sigma) <= opts.outer_tol * new_sigma
            sigma = new_sigma
            mus = 2.0 * sigma * lam * w
        if stalled:
            if full:
                if scaled:
                    viol = _kkt_violation(-half_grad / sigma, beta, part, lam * w)
                else:
                    viol = _kkt_violation(-2.0 * half_grad, beta, part, mus)
                if viol <= opts.kkt_tol:
                    converged = True
                    break
            sweep = everything
        elif full:
            active = np.flatnonzero(part.block_norms(beta, 2.0) > 0).tolist()
            sweep = active if active else everything
        if not stalled and it % POLISH_EVERY == 0:
            polished, F = _newton_polish(prob.smooth(scaled), beta, part, lam * w)
            if F is not None and F < obj:
                beta, obj = polished, F
                history.append(obj)
                half_grad = prob.c - prob.G @ beta
                if scaled:
                    sigma = math.sqrt(prob.mse(beta))
                    if sigma < floor:
                        raise DegenerateFitError(
                            "residual scale collapsed to zero; the fit interpolates the data"
                        )
                    mus = 2.0 * sigma * lam * w
    return beta, obj, history, it, converged


def fit_group_lasso_linear(
    data: Dataset,
    lam: float,
    opts: SolverOptions | None = None,
    weights=None,
    beta0=None,
    fit_intercept: bool = False,
) -> ModelFit:
    """Group lasso for least squares, ``(1/n)||y - X beta||^2 + lam * penalty``.

    Each group update solves its block subproblem exactly (eigen-decomposition
    of the block Gram matrix plus a scalar secular equation), so the objective
    never increases. With ``fit_intercept`` the problem is solved on centred
    data, which is the same as an unpenalised intercept.
    """
    _check_task(data, "linear")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    opts = opts or SolverOptions()
    w = _weights(data.part, weights)
    prob = _GramProblem(data, fit_intercept)
    beta = np.zeros(data.d) if beta0 is None else np.array(beta0, dtype=float)
    beta, obj, history, it, conv = _bcd(prob, lam, w, beta, opts)
    return ModelFit(
        beta=beta,
        lam=float(lam),
        intercept=prob.intercept(beta),
        iterations=it,
        converged=conv,
        objective=penalized_objective(
            data, beta, lam, w, prob.intercept(beta), loss="squared"
        ),
        weights=w,
        history=history,
        kind="group_lasso",
    )


def fit_gsrl_linear(
    data: Dataset,
    lam: float,
    opts: SolverOptions | None = None,
    weights=None,
    beta0=None,
    fit_intercept: bool = False,
) -> ModelFit:
    """Group square-root lasso, ``sqrt(MSE(beta)) + lam * penalty``.

    Scaled-lasso iteration: with ``sigma = sqrt(MSE(beta))`` held fixed,
    ``beta`` is updated on ``MSE/(2 sigma) + lam * penalty``, i.e. group lasso
    block steps at penalty level ``2 * lam * sigma``; then ``sigma`` is
    refreshed. The inner group lasso is not solved to convergence between
    refreshes: one sweep per refresh reaches the same fixed point much faster.
    Starts from ``beta = 0`` (or ``beta0``) and stops when the objective has
    stalled, ``sigma`` changes by less than ``outer_tol`` relative, and the
    KKT conditions hold to ``kkt_tol``.

    Raises
    ------
    DegenerateFitError
        If ``sigma`` drops below 1e-12, or below ``INTERPOLATION_RTOL``
        times the null-model residual scale when the design has enough
        columns to interpolate the responses.
    """
    _check_task(data, "linear")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    opts = opts or SolverOptions()
    w = _weights(data.part, weights)
    prob = _GramProblem(data, fit_intercept)
    beta = np.zeros(data.d) if beta0 is None else np.array(beta0, dtype=float)
    beta, obj, history, it, converged = _bcd(prob, lam, w, beta, opts, scaled=True)
    sigma = math.sqrt(prob.mse(beta))
    return ModelFit(
        beta=beta,
        lam=float(lam),
        intercept=prob.intercept(beta),
        sigma_hat=sigma,
        iterations=it,
        converged=converged,
        objective=penalized_objective(data, beta, lam, w, prob.intercept(beta)),
        weights=w,
        history=history,
        kind="gsrl",
    )


# -- logistic: monotone FISTA ------------------------------------------------


def _logistic_grad(X, y, beta, b0):
    m = y * (X @ beta + b0)
    # d/dm log(1 + e^-m) = -1 / (1 + e^m)
    s = -y * np.exp(-np.logaddexp(0.0, m))
    n = X.shape[0]
    return float(np.mean(np.logaddexp(0.0, -m))), X.T @ s / n, float(s.sum()) / n


def fit_grlasso_logistic(
    data: Dataset,
    lam: float,
    opts: SolverOptions | None = None,
    weights=None,
    beta0=None,
    intercept0: float = 0.0,
    fit_intercept: bool = False,
) -> ModelFit:
    """Group lasso logistic regression.

    Minimises ``mean log(1 + exp(-y (X beta + b))) + lam * penalty`` with a
    monotone variant of accelerated proximal gradient: the step size comes
    from backtracking on the quadratic upper bound (step halved on failure),
    and an iterate is only accepted when it does not raise the objective.
    Periodic Newton steps on the nonzero groups speed up the final phase.
    Converged means both the proximal-gradient residual and the KKT
    violation fell below ``kkt_tol``.
    On separable data with ``lam = 0`` the minimiser does not exist; the
    fit is then reported unconverged, whatever the residual.
    """
    _check_task(data, "logistic")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    opts = opts or SolverOptions()
    w = _weights(data.part, weights)
    X, y, part = data.X, data.y, data.part
    mus = lam * w

    def F(beta, b0):
        return _logistic_grad(X, y, beta, b0)[0] + float(mus @ part.block_norms(beta, 2.0))

    def prox_step(beta, b0, gb, g0, L):
        nb = group_prox(beta - gb / L, part, mus, 1.0 / L)
        return nb, (b0 - g0 / L) if fit_intercept else 0.0

    X1 = np.hstack([X, np.ones((data.n, 1))])
    extra = [data.d] if fit_intercept else []

    def smooth(theta, order=2):
        m = y * (X1 @ theta)
        f = float(np.mean(np.logaddexp(0.0, -m)))
        if order == 0:
            return f
        p = np.exp(-np.logaddexp(0.0, m))  # 1 / (1 + e^m)
        g = X1.T @ (-y * p) / data.n
        H = (X1.T * (p * (1.0 - p))) @ X1 / data.n
        return f, g, H

    x = np.zeros(data.d) if beta0 is None else np.array(beta0, dtype=float)
    x0 = float(intercept0) if fit_intercept else 0.0
    Fx = F(x, x0)
    z, z0 = x.copy(), x0
    x_prev, x0_prev = x.copy(), x0
    t = 1.0
    L = 1.0
    history = [Fx]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        fz, gz, gz0 = _logistic_grad(X, y, z, z0)
        while True:
            u, u0 = prox_step(z, z0, gz, gz0, L)
            du, du0 = u - z, u0 - z0
            fu = _logistic_grad(X, y, u, u0)[0]
            if fu <= fz + gz @ du + gz0 * du0 + 0.5 * L * (du @ du + du0 * du0) + 1e-15 * abs(fz):
                break
            L *= 2.0
        Fu = fu + float(mus @ part.block_norms(u, 2.0))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        x_prev, x0_prev = x, x0
        if Fu <= Fx:
            x, x0, Fx = u, u0, Fu
        z = x + (t / t_next) * (u - x) + ((t - 1.0) / t_next) * (x - x_prev)
        z0 = x0 + (t / t_next) * (u0 - x0) + ((t - 1.0) / t_next) * (x0 - x0_prev)
        t = t_next
        history.append(Fx)
        # proximal-gradient residual at the accepted iterate
        _, gx, gx0 = _logistic_grad(X, y, x, x0)
        px, px0 = prox_step(x, x0, gx, gx0, L)
        resid = L * math.sqrt(float((px - x) @ (px - x)) + (px0 - x0) ** 2)
        if resid <= opts.kkt_tol and max(_kkt_violation(gx, x, part, mus),
                                         abs(gx0) if fit_intercept else 0.0) <= opts.kkt_tol:
            converged = True
            break
        if Fu > Fx:  # rejected step: restart momentum
            z, z0, t = x.copy(), x0, 1.0
        if it % (2 * POLISH_EVERY) == 0:
            theta, Fp = _newton_polish(smooth, np.append(x, x0), part, mus, extra)
            if Fp is not None and Fp < Fx:
                x, x0, Fx = theta[:-1], float(theta[-1]), Fp
                z, z0, t = x.copy(), x0, 1.0
                history.append(Fx)
    if lam == 0 and np.all(y * (X @ x + x0) > 0):
        # strictly positive margins prove separability: no finite minimiser
        converged = False
    return ModelFit(
        beta=x,
        lam=float(lam),
        intercept=x0,
        iterations=it,
        converged=converged,
        objective=penalized_objective(data, x, lam, w, x0),
        weights=w,
        history=history,
        kind="logistic",
    )


# -- certificates ------------------------------------------------------------


def loss_gradient(data: Dataset, fit: ModelFit) -> np.ndarray:
    """Gradient of the unpenalised loss the fit minimised, at ``fit.beta``."""
    r = data.y - data.X @ fit.beta - fit.intercept
    n = data.n
    if data.task == "logistic":
        m = data.y * (data.X @ fit.beta + fit.intercept)
        return data.X.T @ (-data.y * np.exp(-np.logaddexp(0.0, m))) / n
    if fit.kind == "gsrl":
        return -data.X.T @ r / (n * math.sqrt(float(r @ r) / n))
    return -2.0 * data.X.T @ r / n


def kkt_violation(data: Dataset, fit: ModelFit) -> float:
    """Largest per-group violation of the first-order conditions at ``fit``."""
    w = _weights(data.part, fit.weights)
    return _kkt_violation(loss_gradient(data, fit), fit.beta, data.part, fit.lam * w)


def lambda_max(data: Dataset, kind: str | None = None, weights=None, fit_intercept: bool = False) -> float:
    """Smallest ``lam`` whose solution is ``beta = 0``, from the KKT conditions at zero.

    ``kind`` is ``"gsrl"`` (default for linear data), ``"group_lasso"`` or
    ``"logistic"``.
    """
    w = _weights(data.part, weights)
    X, y = data.X, data.y
    n = data.n
    if data.task == "logistic":
        b0 = 0.0
        if fit_intercept:
            pbar = float(np.clip(np.mean(y > 0), 1e-12, 1 - 1e-12))
            b0 = math.log(pbar / (1.0 - pbar))
        grad = X.T @ (-y * np.exp(-np.logaddexp(0.0, y * b0))) / n
    else:
        if fit_intercept:
            X, y = X - X.mean(axis=0), y - y.mean()
        kind = kind or "gsrl"
        if kind == "gsrl":
            sigma = math.sqrt(float(y @ y) / n)
            grad = X.T @ y / (n * sigma) if sigma > 0 else np.zeros(data.d)
        elif kind == "group_lasso":
            grad = 2.0 * X.T @ y / n
        else:
            raise ValueError(f"unknown kind {kind!r}")
    norms = data.part.block_norms(grad, 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, norms / np.where(w > 0, w, 1.0), 0.0)
    return float(ratio.max())
