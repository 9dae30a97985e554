"""Regularization from the robust Wasserstein profile (RWP) limit laws.

The RWP function at the true parameter, suitably scaled, converges to a
limit law whose ``1 - chi`` quantile is the smallest uncertainty radius
that keeps the true parameter inside the distributionally robust region
with probability ``1 - chi``. The laws are dominated by tractable ones:

* linear, square cost: ``L1 <= L2 = E e^2 / (E e^2 - (E|e|)^2) ||Z||_*^2``
* logistic, norm cost: ``L3 <= L4 = ||Z||_*``

with ``Z ~ N(0, Var X)`` and ``||.||_*`` the dual of the penalty norm. The
selector estimates the quantile by Monte Carlo and converts it into the
penalty level ``lambda``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .data_gen import make_rng
from .group_norm import GroupPartition, NormSpec, dual_spec, dual_witness, group_norm
from .solvers import (
    Dataset,
    DegenerateFitError,
    ModelFit,
    SolverOptions,
    default_weights,
    fit_gsrl_linear,
)

DEFAULT_CHUNK = 10_000


class DegenerateErrorsError(DegenerateFitError):
    """Residuals have ``E e^2 <= (E|e|)^2``, so the linear recipe divides by zero."""


@dataclass
class LimitLawSample:
    """Monte Carlo draws of one limit law.

    ``law`` is ``"L1"``, ``"L2"`` or ``"L4"``; ``config`` records what
    produced the draws. ``converged`` is only set for ``L1``, one flag per
    draw.
    """

    law: str
    draws: np.ndarray
    config: dict = field(default_factory=dict)
    converged: np.ndarray | None = None

    def quantile(self, level: float) -> float:
        return quantile(self.draws, level)

    def quantile_se(self, level: float) -> float:
        return quantile_se(self.draws, level)


@dataclass
class RwpiSelection:
    """Outcome of the two-step recipe.

    ``moment_ratio`` is ``(E|e|)^2 / E e^2`` from the pilot residuals
    (linear only). ``eta_se`` is the Monte Carlo standard error of
    ``eta_hat``.
    """

    task: str
    chi: float
    n_mc: int
    seed: int
    eta_hat: float
    eta_se: float
    sigma_hat_cov: np.ndarray = field(repr=False)
    lam: float
    moment_ratio: float | None = None
    mean_abs: float | None = None
    mean_sq: float | None = None
    pilot_lambdas: tuple[float, ...] = ()


class ErrorMoments(NamedTuple):
    mean_abs: float
    mean_sq: float

    @property
    def ratio(self) -> float:
        """``(E|e|)^2 / E e^2``, 1 for degenerate residuals."""
        return self.mean_abs**2 / self.mean_sq if self.mean_sq > 0 else 1.0

    @property
    def degenerate(self) -> bool:
        return self.mean_sq - self.mean_abs**2 <= 1e-12 * self.mean_sq


# -- covariance and Gaussian sampling ----------------------------------------


def estimate_covariance(X) -> np.ndarray:
    """Column-centred sample covariance with denominator ``n``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D array with at least two rows")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    return 0.5 * (cov + cov.T)


def psd_factor(cov) -> np.ndarray:
    """Symmetric square root ``F`` with ``F @ F = cov``.

    Eigenvalues below ``-1e-8 * max_eig`` mean the input is not a
    covariance; smaller negative ones are rounding and are clamped to zero,
    as is anything under ``1e-12 * max_eig``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.all(np.isfinite(cov)):
        raise np.linalg.LinAlgError("covariance has NaN or Inf entries")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise np.linalg.LinAlgError("covariance is not symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    top = max(evals[-1], 0.0)
    if evals[0] < -1e-8 * max(top, 1e-300):
        raise np.linalg.LinAlgError(
            f"covariance is not positive semi-definite (eigenvalue {evals[0]:.3g})"
        )
    evals = np.where(evals > 1e-12 * top, evals, 0.0)
    return (evecs * np.sqrt(evals)) @ evecs.T


def gaussian_chunks(cov, n_mc: int, seed, chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Draws of ``N(0, cov)`` in fixed-size chunks, each on its own stream.

    Chunk ``k`` uses the spawned stream ``k`` of ``seed``, so the sequence
    of draws does not depend on how the caller consumes them.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    F = psd_factor(cov)
    d = F.shape[0]
    for k, start in enumerate(range(0, n_mc, chunk)):
        m = min(chunk, n_mc - start)
        yield make_rng(seed, k).standard_normal((m, d)) @ F


def sample_dual_gaussian_norm(cov, part: GroupPartition, dual: NormSpec, n_mc: int = 100_000,
                              seed=0, squared: bool = False,
                              chunk: int = DEFAULT_CHUNK) -> LimitLawSample:
    """Draws of ``||Z||`` (or ``||Z||^2``) under ``dual`` with ``Z ~ N(0, cov)``.

    ``dual`` is the norm the Gaussian vector is measured in, i.e. already
    the dual of the penalty norm. The law is tagged ``L2`` when squared
    (up to the error-moment factor) and ``L4`` otherwise.
    """
    parts = [group_norm(Z, part, dual) for Z in gaussian_chunks(cov, n_mc, seed, chunk)]
    draws = np.concatenate(parts)
    if squared:
        draws = draws * draws
    config = dict(n_mc=n_mc, seed=seed, squared=squared, chunk=chunk, spec=dual)
    return LimitLawSample("L2" if squared else "L4", draws, config)


def quantile(draws, level: float) -> float:
    """Order statistic ``ceil(level * n)`` (1-based) of the sorted draws."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    x = np.asarray(draws, dtype=float).ravel()
    k = max(1, math.ceil(level * x.size - 1e-9))
    return float(np.partition(x, k - 1)[k - 1])


def quantile_se(draws, level: float) -> float:
    """Monte Carlo standard error of ``quantile(draws, level)``.

    Half the spread between the order statistics ``sqrt(n p (1 - p))``
    positions either side, i.e. a distribution-free binomial interval of
    plus or minus one standard deviation.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    k = max(1, math.ceil(level * n - 1e-9)) - 1
    m = max(1, math.ceil(math.sqrt(n * level * (1.0 - level))))
    lo, hi = max(0, k - m), min(n - 1, k + m)
    return float(0.5 * (x[hi] - x[lo]))


# -- lambda formulas -----------------------------------------------------------


def estimate_error_moments(data: Dataset, pilot: ModelFit) -> ErrorMoments:
    """Mean absolute and mean squared pilot residual."""
    if data.task != "linear":
        raise ValueError("error moments are defined for linear data only")
    r = data.y - data.X @ pilot.beta - pilot.intercept
    return ErrorMoments(float(np.mean(np.abs(r))), float(np.mean(r * r)))


def lambda_linear(eta_sq_quantile: float, n: int, mean_abs: float, mean_sq: float) -> float:
    """``sqrt(eta / (n (1 - (E|e|)^2 / E e^2)))``.

    Raises
    ------
    DegenerateErrorsError
        If ``E e^2 <= (E|e|)^2``, i.e. ``|e|`` is a.s. constant.
    """
    if eta_sq_quantile < 0 or n < 1:
        raise ValueError("need eta >= 0 and n >= 1")
    moments = ErrorMoments(mean_abs, mean_sq)
    if moments.degenerate:
        raise DegenerateErrorsError(
            f"residuals have E e^2 = {mean_sq:.6g} <= (E|e|)^2 = {mean_abs**2:.6g}"
        )
    return math.sqrt(eta_sq_quantile / (n * (1.0 - moments.ratio)))


def lambda_logistic(eta_quantile: float, n: int) -> float:
    """``eta / sqrt(n)``."""
    if eta_quantile < 0 or n < 1:
        raise ValueError("need eta >= 0 and n >= 1")
    return eta_quantile / math.sqrt(n)


def select_lambda(data: Dataset, chi: float = 0.05, n_mc: int = 100_000, seed=0,
                  weights=None, fit_intercept: bool = False,
                  opts: SolverOptions | None = None) -> RwpiSelection:
    """Penalty level for ``data`` at confidence ``1 - chi``.

    Linear data: the quantile of the squared dual norm is combined with the
    moment ratio of residuals from a pilot square-root lasso fit. The pilot
    starts at ``sqrt(eta / n)`` (the ratio-zero limit) and is refitted once
    at the resulting ``lambda`` before the final ratio is taken. Logistic
    data uses the unsquared quantile directly.
    """
    if not 0.0 < chi < 1.0:
        raise ValueError("chi must lie strictly between 0 and 1")
    w = default_weights(data.part) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("the dual norm needs strictly positive group weights")
    cov = estimate_covariance(data.X)
    dual = dual_spec(NormSpec(w, 2.0, 1.0))
    squared = data.task == "linear"
    sample = sample_dual_gaussian_norm(cov, data.part, dual, n_mc, seed, squared=squared)
    eta = sample.quantile(1.0 - chi)
    eta_se = sample.quantile_se(1.0 - chi)
    common = dict(task=data.task, chi=chi, n_mc=n_mc, seed=seed, eta_hat=eta, eta_se=eta_se,
                  sigma_hat_cov=cov)
    if data.task == "logistic":
        return RwpiSelection(lam=lambda_logistic(eta, data.n), **common)
    lam = math.sqrt(eta / data.n)
    pilots = []
    beta0 = None
    for _ in range(2):
        pilots.append(lam)
        try:
            pilot = fit_gsrl_linear(data, lam, opts, weights=w, beta0=beta0,
                                    fit_intercept=fit_intercept)
        except DegenerateFitError as exc:
            raise DegenerateErrorsError(f"pilot residuals vanish: {exc}") from exc
        beta0 = pilot.beta
        moments = estimate_error_moments(data, pilot)
        lam = lambda_linear(eta, data.n, *moments)
    return RwpiSelection(lam=lam, moment_ratio=moments.ratio, mean_abs=moments.mean_abs,
                         mean_sq=moments.mean_sq, pilot_lambdas=tuple(pilots), **common)


# -- limit law L1 ----------------------------------------------------------------


def sample_L2(cov, part: GroupPartition, spec: NormSpec, mean_abs: float, mean_sq: float,
              n_mc: int = 100_000, seed=0) -> LimitLawSample:
    """``E e^2 / (E e^2 - (E|e|)^2) * ||Z||_*^2`` with ``||.||_*`` dual to ``spec``."""
    if ErrorMoments(mean_abs, mean_sq).degenerate:
        raise DegenerateErrorsError("degenerate error moments")
    base = sample_dual_gaussian_norm(cov, part, dual_spec(spec), n_mc, seed, squared=True)
    base.draws *= mean_sq / (mean_sq - mean_abs**2)
    base.config.update(mean_abs=mean_abs, mean_sq=mean_sq)
    return base


def sample_L1(beta_star, error_samples, X_samples, part: GroupPartition, spec: NormSpec,
              n_mc: int = 2000, seed=0, cov=None, max_iter: int = 2000,
              tol: float = 1e-7) -> LimitLawSample:
    """Draws of ``max_z 2 sigma z'Z - E ||e z - (z'X) beta*||^2`` under ``spec``.

    The expectation is the average over the paired ``(e, X)`` samples,
    ``sigma^2`` is their mean squared error and ``Z ~ N(0, cov)`` with
    ``cov`` the sample covariance of ``X_samples`` unless given. Draws share
    the Gaussian stream of ``sample_dual_gaussian_norm`` for the same seed.

    For the group lasso family (``p = 2``, ``s = 1``) the concave problem
    is solved by alternating maximisation over ``z`` and the variational
    weights of ``(sum_j a_j ||v_j||)^2 = min_eta sum_j a_j^2 ||v_j||^2 / eta_j``,
    vectorised across draws, until a dual bound certifies the value to
    ``tol`` relative. Other specs fall back to supergradient ascent,
    one draw at a time, which is only practical for small instances.
    """
    beta_star = np.asarray(beta_star, dtype=float)
    e = np.asarray(error_samples, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X_samples, dtype=float))
    if e.size == 0 or X.shape[0] != e.size or X.shape[1] != part.d or beta_star.size != part.d:
        raise ValueError("need matching, nonempty error and predictor samples")
    sigma = math.sqrt(float(np.mean(e * e)))
    cov = estimate_covariance(X) if cov is None else cov
    Z = np.concatenate(list(gaussian_chunks(cov, n_mc, seed)))
    # A_k = e_k I - beta* X_k', so the inner vector is v_k = A_k z
    A = e[:, None, None] * np.eye(part.d) - beta_star[None, :, None] * X[:, None, :]
    if spec.p == 2.0 and spec.s == 1.0:
        vals, ok = _l1_reweighted(A, Z, sigma, part, spec, max_iter, tol)
    else:
        vals, ok = _l1_supergradient(A, Z, sigma, part, spec, max_iter)
    config = dict(n_mc=n_mc, seed=seed, sigma=sigma, n_samples=e.size, spec=spec)
    return LimitLawSample("L1", vals, config, converged=ok)


def _l1_value(A, zeta, Z, sigma, part, spec):
    V = np.einsum("kia,ba->bki", A, zeta)
    nv = group_norm(V.reshape(-1, part.d), part, spec).reshape(V.shape[:2])
    return 2.0 * sigma * np.einsum("ba,ba->b", zeta, Z) - np.mean(nv * nv, axis=1)


def _l1_reweighted(A, Z, sigma, part, spec, max_iter, tol):
    # Lower bound: the objective at the current z. Upper bound: the dual
    #   L1 = min { mean_k ||w_k||_*^2 : mean_k A_k' w_k = sigma Z },
    # evaluated at w_k = ||v_k|| grad||v_k|| plus a correction that restores
    # the constraint. A draw stops once the bounds agree to ``tol``
    # relative. The weight update behaves like a power iteration and crawls
    # when groups nearly tie or the optimum is group-sparse, so every round
    # is a SQUAREM extrapolation of two plain updates, kept only where it
    # does not lower the value.
    m, d, _ = A.shape
    B = Z.shape[0]
    alpha = spec.weights
    labels = part.labels
    G = part.n_groups
    # rank-one pieces a a' of every row of every A_k, flattened for one matmul
    rows = A.reshape(m * d, d)
    outer = (rows[:, :, None] * rows[:, None, :]).reshape(m * d, d * d)
    a2 = (alpha**2)[labels]

    def gram(eta):
        D = a2[None, None, :] / eta[:, :, labels]
        return D, (D.reshape(-1, m * d) @ outer).reshape(-1, d, d) / m

    def update(eta, Zb):
        _, M = gram(eta)
        zeta = sigma * np.linalg.solve(M, Zb[:, :, None])[:, :, 0]
        block = alpha * part.block_norms(np.einsum("kia,ba->bki", A, zeta), 2.0)
        tot = block.sum(axis=2, keepdims=True)
        floor = 1e-12 * np.maximum(tot.max(axis=(1, 2), keepdims=True), 1e-300)
        new_eta = (block + floor) / (tot + floor * G)
        value = 2.0 * sigma * np.einsum("ba,ba->b", zeta, Zb) - np.mean(tot[..., 0] ** 2, axis=1)
        return new_eta, value, zeta

    def dual_bound(zeta, eta, Zb):
        V = np.einsum("kia,ba->bki", A, zeta)
        nrm = part.block_norms(V, 2.0)
        N = (alpha * nrm).sum(axis=2)
        scale = np.divide(alpha, nrm, out=np.zeros_like(nrm), where=nrm > 0)
        W = N[..., None] * scale[..., labels] * V
        r = sigma * Zb - np.einsum("kia,bki->ba", A, W) / m
        # the correction D_k A_k u lands mostly on blocks with small weight,
        # i.e. near-zero blocks whose subgradient is free
        D, M = gram(eta)
        u = np.linalg.solve(M, r[:, :, None])[:, :, 0]
        W = W + D * np.einsum("kia,ba->bki", A, u)
        Nd = (part.block_norms(W, 2.0) / alpha).max(axis=2)
        return np.mean(Nd * Nd, axis=1)

    eta = np.full((B, m, G), 1.0 / G)
    value = np.full(B, -np.inf)
    upper = np.full(B, np.inf)
    done = np.zeros(B, dtype=bool)
    for _ in range(max_iter):
        live = np.flatnonzero(~done)
        e0, Zb = eta[live], Z[live]
        e1, _, _ = update(e0, Zb)
        e2, v2, z2 = update(e1, Zb)
        r = e1 - e0
        v = e2 - 2.0 * e1 + e0
        rn = np.sqrt(np.einsum("bkg,bkg->b", r, r))
        vn = np.sqrt(np.einsum("bkg,bkg->b", v, v))
        step = -np.divide(rn, vn, out=np.ones_like(rn), where=vn > 0)
        step = np.minimum(step, -1.0)[:, None, None]
        ex = np.maximum(e0 - 2.0 * step * r + step * step * v, 1e-12 / G)
        ex /= ex.sum(axis=2, keepdims=True)
        e3, v3, z3 = update(ex, Zb)
        take = v3 >= v2
        eta[live] = np.where(take[:, None, None], e3, e2)
        best_z = np.where(take[:, None], z3, z2)
        best_eta = np.where(take[:, None, None], ex, e1)
        value[live] = np.maximum(value[live], np.maximum(v2, v3))
        upper[live] = np.minimum(upper[live], dual_bound(best_z, best_eta, Zb))
        conv = upper[live] - value[live] <= tol * np.abs(upper[live])
        done[live[conv]] = True
        if done.all():
            break
    return np.maximum(value, 0.0), done


def _l1_supergradient(A, Z, sigma, part, spec, max_iter):
    # plain supergradient ascent with steps ~ 1/sqrt(it); a draw counts as
    # converged when the second half of the run improved the best value by
    # less than 1e-4 relative
    dual = dual_spec(spec)
    m = A.shape[0]
    B, d = Z.shape
    out = np.zeros(B)
    ok = np.zeros(B, dtype=bool)
    scale = float(np.mean([np.linalg.norm(Ak, 2) ** 2 for Ak in A]))
    for b in range(B):
        z = np.zeros(d)
        best = half = 0.0
        for it in range(1, max_iter + 1):
            V = A @ z
            g = 2.0 * sigma * Z[b]
            for k in range(m):
                if np.any(V[k]):
                    nk = group_norm(V[k], part, spec)
                    g = g - 2.0 * nk * (A[k].T @ dual_witness(V[k], part, dual)) / m
            z = z + g / (2.0 * scale * math.sqrt(it))
            best = max(best, float(_l1_value(A, z[None], Z[b][None], sigma, part, spec)[0]))
            if it == max_iter // 2:
                half = best
        out[b] = best
        ok[b] = best - half <= 1e-4 * max(1.0, abs(best))
    return out, ok
