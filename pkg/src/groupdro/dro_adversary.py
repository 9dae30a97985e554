"""Numerical checks of the optimal-transport duality behind the estimators.

The transport cost moves predictors only:

    c((x, y), (x', y')) = ||x - x'||^rho   if y == y',   +inf otherwise,

with ``||.||`` the dual of the penalty norm. For this cost the worst-case
risk over the ball ``{P : D_c(P, P_n) <= delta}`` has closed forms

* linear, ``rho = 2``: ``(sqrt(MSE) + sqrt(delta) ||beta||)^2``
* logistic, ``rho = 1``: ``mean log-loss + delta ||beta||``

This module computes those closed forms, attacks them with explicit
perturbed laws inside the ball, solves the discrete transport problem
exactly, and estimates the RWP function by a primal augmented Lagrangian
method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .data_gen import make_rng
from .group_norm import INF, GroupPartition, NormSpec, dual_spec, dual_witness, group_norm
from .solvers import Dataset


@dataclass
class DiscreteMeasure:
    """Finitely supported law of ``(x, y)`` pairs."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        k = self.X.shape[0]
        if self.y.size != k or self.weights.size != k:
            raise ValueError("atoms, responses and weights must have the same length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")

    @classmethod
    def empirical(cls, X, y) -> "DiscreteMeasure":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X, y, np.full(X.shape[0], 1.0 / X.shape[0]))

    @classmethod
    def from_dataset(cls, data: Dataset) -> "DiscreteMeasure":
        return cls.empirical(data.X, data.y)


@dataclass(frozen=True)
class CostSpec:
    """``||dx||^rho`` under ``norm``, forbidding any change of the response."""

    part: GroupPartition
    norm: NormSpec
    rho: int = 2

    def __post_init__(self):
        if self.rho not in (1, 2):
            raise ValueError("rho must be 1 or 2")
        if len(self.norm.alpha) != self.part.n_groups:
            raise ValueError("norm weights do not match the partition")

    @classmethod
    def for_penalty(cls, part: GroupPartition, penalty: NormSpec, rho: int = 2) -> "CostSpec":
        """Cost whose norm is the dual of the penalty norm."""
        return cls(part, dual_spec(penalty), rho)

    @property
    def penalty(self) -> NormSpec:
        return dual_spec(self.norm)

    def __call__(self, dx) -> np.ndarray:
        return np.power(group_norm(np.asarray(dx, dtype=float), self.part, self.norm), self.rho)


@dataclass
class TransportPlan:
    """Optimal coupling; ``coupling`` is ``None`` when no finite plan exists."""

    coupling: np.ndarray | None
    value: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def transport_discrepancy(P: DiscreteMeasure, Q: DiscreteMeasure,
                          cost: CostSpec) -> tuple[float, TransportPlan]:
    """Minimal expected cost of coupling ``P`` with ``Q``.

    Solves the Kantorovich linear program over the pairs of atoms with
    matching responses (the others have infinite cost). If the responses
    carry different mass under ``P`` and ``Q`` no finite coupling exists
    and the value is ``inf``.
    """
    if P.X.shape[1] != Q.X.shape[1]:
        raise ValueError("measures live in different dimensions")
    labels = np.union1d(P.y, Q.y)
    for lab in labels:
        if abs(P.weights[P.y == lab].sum() - Q.weights[Q.y == lab].sum()) > 1e-12:
            return INF, TransportPlan(None, INF)
    i, j = np.nonzero(P.y[:, None] == Q.y[None, :])
    c = cost(P.X[i] - Q.X[j])
    k, m = P.X.shape[0], Q.X.shape[0]
    nvar = i.size
    cols = np.arange(nvar)
    A = sparse.vstack([
        sparse.csr_matrix((np.ones(nvar), (i, cols)), shape=(k, nvar)),
        sparse.csr_matrix((np.ones(nvar), (j, cols)), shape=(m, nvar)),
    ]).tocsr()
    b = np.concatenate([P.weights, Q.weights])
    res = optimize.linprog(
        c, A_eq=A, b_eq=b, bounds=(0, None), method="highs",
        options=dict(primal_feasibility_tolerance=1e-10, dual_feasibility_tolerance=1e-10),
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    pi = np.zeros((k, m))
    pi[i, j] = np.maximum(res.x, 0.0)
    value = float(c @ pi[i, j])
    return value, TransportPlan(pi, value)


# -- closed forms ------------------------------------------------------------


def _margins(data: Dataset, beta, intercept: float) -> np.ndarray:
    return data.X @ np.asarray(beta, dtype=float) + intercept


def worst_case_linear(data: Dataset, beta, delta: float, spec: NormSpec,
                      intercept: float = 0.0) -> float:
    """``(sqrt(MSE) + sqrt(delta) ||beta||)^2`` with ``||.||`` given by ``spec``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    r = data.y - _margins(data, beta, intercept)
    rmse = math.sqrt(float(np.mean(r * r)))
    return (rmse + math.sqrt(delta) * group_norm(beta, data.part, spec)) ** 2


def worst_case_logistic(data: Dataset, beta, delta: float, spec: NormSpec,
                        intercept: float = 0.0) -> float:
    """Mean log-exponential loss ``+ delta ||beta||``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    loss = float(np.mean(np.logaddexp(0.0, -data.y * _margins(data, beta, intercept))))
    return loss + delta * group_norm(beta, data.part, spec)


# -- adversary -----------------------------------------------------------------


@dataclass
class AdversaryResult:
    """Best loss found by the adversary and the perturbed law attaining it."""

    value: float
    converged: bool
    iterations: int
    measure: DiscreteMeasure = field(repr=False)

    def __float__(self) -> float:
        return self.value


def _project_ball(r: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto ``{r >= 0, mean(r^2) <= budget}``."""
    r = np.maximum(r, 0.0)
    norm = math.sqrt(float(np.mean(r * r)))
    if norm > math.sqrt(budget):
        r = r * (math.sqrt(budget) / norm)
    return r


def adversary_lower_bound(data: Dataset, beta, delta: float, cost: CostSpec,
                          iters: int = 2000, seed=0, intercept: float = 0.0,
                          tol: float = 1e-12, reach: float = 1e6) -> AdversaryResult:
    """Empirical loss under an explicit law within transport budget ``delta``.

    Every move of a predictor goes along ``s_i a``, where ``a`` is the
    cost-norm unit vector with ``a @ beta = ||beta||`` (a Hoelder witness)
    and ``s_i = +-1`` is the sign that increases the loss of sample ``i``.

    ``rho = 2``: sample ``i`` moves by radius ``r_i`` with
    ``mean(r_i^2) <= delta``; the radii come from projected gradient ascent
    started at a seeded random feasible point.

    ``rho = 1``: the loss gain per unit of budget grows with the distance
    moved, so the budget is spent on a sliver of a single atom sent to
    distance ``reach``. The value approaches the worst case as ``reach``
    grows but never attains it, matching a supremum that is only reached
    in the limit.

    The returned value is the exact mean loss of ``measure``, hence a lower
    bound on the worst-case risk.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if cost.part != data.part:
        raise ValueError("cost and data use different partitions")
    beta = np.asarray(beta, dtype=float)
    n = data.n
    margins = _margins(data, beta, intercept)
    bnorm = group_norm(beta, data.part, cost.penalty)
    if delta == 0.0 or bnorm == 0.0:
        value = _mean_loss(data.task, data.y, margins)
        return AdversaryResult(value, True, 0, DiscreteMeasure.from_dataset(data))
    a = dual_witness(beta, data.part, cost.norm)
    if data.task == "linear":
        s = np.where(data.y - margins >= 0, -1.0, 1.0)
    else:
        s = -data.y

    def losses(r):
        return _losses(data.task, data.y, margins + s * r * bnorm)

    if cost.rho == 1:
        base = losses(np.zeros(n))
        rate = (losses(np.full(n, reach)) - base) / reach
        k = int(np.argmax(rate))
        w = min(1.0, n * delta / reach)
        X = np.vstack([data.X, data.X[k] + s[k] * reach * a])
        y = np.append(data.y, data.y[k])
        weights = np.append(np.full(n, 1.0 / n), w / n)
        weights[k] -= w / n
        value = float(weights[:n] @ base + weights[n] * losses(np.full(n, reach))[k])
        return AdversaryResult(value, True, 1, DiscreteMeasure(X, y, weights))

    def value_grad(r):
        m = margins + s * r * bnorm
        if data.task == "linear":
            res = data.y - m
            return float(np.mean(res * res)), -2.0 * res * s * bnorm / n
        z = -data.y * m
        sig = np.exp(-np.logaddexp(0.0, -z))
        return float(np.mean(np.logaddexp(0.0, z))), sig * bnorm / n

    rng = make_rng(seed)
    r0 = _project_ball(rng.random(n) * 2.0 * math.sqrt(delta), delta)
    value, r, it, converged = _ascend(value_grad, _project_ball, r0, delta, iters, tol)
    moved = DiscreteMeasure.empirical(data.X + (r * s)[:, None] * a[None, :], data.y)
    return AdversaryResult(value, converged, it, moved)


def _ascend(value_grad, project, r, delta, iters, tol):
    val, g = value_grad(r)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, iters + 1):
        while True:
            cand = project(r + step * g, delta)
            cval, cg = value_grad(cand)
            if cval >= val or step < 1e-12:
                break
            step *= 0.5
        moved = float(np.max(np.abs(cand - r)))
        gain = cval - val
        if cval >= val:
            r, val, g = cand, cval, cg
            step *= 2.0
        if moved <= tol * max(1.0, float(np.max(r))) or 0 <= gain <= tol * max(1.0, abs(val)):
            converged = True
            break
    return val, r, it, converged


def _losses(task: str, y, margins) -> np.ndarray:
    if task == "linear":
        return (y - margins) ** 2
    return np.logaddexp(0.0, -y * margins)


def _mean_loss(task: str, y, margins) -> float:
    return float(np.mean(_losses(task, y, margins)))


# -- RWP primal estimate -------------------------------------------------------


@dataclass
class RwpEstimate:
    """Transport cost of a feasible perturbation of the sample.

    ``value`` is measured in the exact cost norm and is an upper bound on
    the RWP function whenever ``violation`` (max-abs residual of the
    moment equations) is at most ``1e-6``; otherwise ``flagged`` is set.
    """

    value: float
    violation: float
    rounds: int
    displacements: np.ndarray = field(repr=False)

    @property
    def flagged(self) -> bool:
        return not self.violation <= 1e-6

    def __float__(self) -> float:
        return self.value


def _smooth_exponent(e: float, sharp: float) -> float:
    if e == INF:
        return sharp
    if e == 1.0:
        return 1.0 + 1.0 / sharp
    return e


def _smooth_sq_norm(D, part: GroupPartition, alpha, q: float, t: float):
    """Row-wise ``||D_i||^2`` for the alpha-(q, t) norm and its gradient."""
    blocks = part.block_norms(D, q) * alpha  # (n, groups)
    top = blocks.max(axis=1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    rel = blocks / safe
    N = top[:, 0] * np.power(np.power(rel, t).sum(axis=1), 1.0 / t)
    grad = np.zeros_like(D)
    Nsafe = np.where(N > 0, N, 1.0)
    for j, idx in enumerate(part.index):
        Dj = D[:, idx]
        bj = np.where(blocks[:, j] > 0, blocks[:, j], 1.0)
        # d||D_j||_q / dD_j, times alpha_j, times dN/db_j
        inner = np.sign(Dj) * np.power(np.abs(Dj) * alpha[j] / bj[:, None], q - 1.0) * alpha[j]
        outer = np.power(blocks[:, j] / Nsafe, t - 1.0)
        grad[:, idx] = (2.0 * N * outer)[:, None] * inner
    return N * N, grad


def rwp_primal_estimate(data: Dataset, beta, cost: CostSpec, intercept: float = 0.0,
                        rounds: int = 20, growth: float = 10.0, sharp: float = 32.0,
                        penalty0: float = 10.0) -> RwpEstimate:
    """Upper estimate of ``min D_c(P, P_n)`` over laws satisfying the normal equations.

    Minimises ``mean ||Delta_i||^2`` subject to
    ``mean (x_i + Delta_i)(y_i - b0 - (x_i + Delta_i)' beta) = 0`` by an
    augmented Lagrangian method (penalty grows by ``growth`` when the
    violation does not fall by a factor four, at most ``rounds`` outer
    rounds) with L-BFGS inner solves. Max-type exponents in the cost norm
    are replaced by ``sharp`` (and 1 by ``1 + 1/sharp``) so the inner
    problems are smooth; the reported value is the exact cost of the final
    displacements.
    """
    if data.task != "linear":
        raise ValueError("the RWP estimate is implemented for linear data")
    if cost.rho != 2:
        raise ValueError("the linear RWP function uses rho = 2")
    beta = np.asarray(beta, dtype=float)
    X, y = data.X, data.y - intercept
    n, d = X.shape
    alpha = cost.norm.weights
    q = _smooth_exponent(cost.norm.p, sharp)
    t = _smooth_exponent(cost.norm.s, sharp)

    def moments(D):
        Zp = X + D
        res = y - Zp @ beta
        return Zp.T @ res / n, Zp, res

    def lagrangian(flat, mu, pen):
        D = flat.reshape(n, d)
        sq, gsq = _smooth_sq_norm(D, data.part, alpha, q, t)
        h, Zp, res = moments(D)
        w = mu + pen * h
        f = sq.mean() + w @ h - 0.5 * pen * (h @ h)
        # d(w'h)/dD_i for the augmented term mu'h + pen/2 |h|^2
        g = gsq / n + (np.outer(res, w) - np.outer(Zp @ w, beta)) / n
        return f, g.ravel()

    D = np.zeros((n, d))
    mu = np.zeros(d)
    pen = penalty0
    h = moments(D)[0]
    viol = float(np.max(np.abs(h)))
    k = 0
    for k in range(1, rounds + 1):
        if viol <= 1e-10:
            break
        res = optimize.minimize(lagrangian, D.ravel(), args=(mu, pen), jac=True,
                                method="L-BFGS-B",
                                options=dict(maxiter=5000, ftol=1e-15, gtol=1e-11))
        D = res.x.reshape(n, d)
        h = moments(D)[0]
        new_viol = float(np.max(np.abs(h)))
        mu = mu + pen * h
        if new_viol > 0.25 * viol:
            pen *= growth
        viol = new_viol
    value = float(np.mean(cost(D)))
    return RwpEstimate(value, viol, k, D)
