"""Seeded self-checks: norm duality, worst-case risk duality and limit-law dominance.

Each suite returns ``Check`` records with the observed discrepancy and the
tolerance it was held to; the command line prints them and exits nonzero
when one fails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_gen import SimulationConfig, make_rng, simulate
from .dro_adversary import CostSpec, adversary_lower_bound, worst_case_linear, worst_case_logistic
from .group_norm import INF, GroupPartition, NormSpec, dual_spec, dual_witness, group_norm
from .rwpi_select import estimate_covariance, sample_L1, sample_L2
from .solvers import Dataset

EXPONENTS = (1.0, 1.5, 2.0, 3.0, INF)
DELTAS = (0.01, 0.1, 1.0)


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    tol: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: worst {self.worst:.3g} vs tol {self.tol:.3g}{extra}"


def random_partition(rng, d_max: int = 10, groups=(2, 4)) -> GroupPartition:
    k = int(rng.integers(groups[0], groups[1] + 1))
    sizes = np.ones(k, dtype=int)
    for _ in range(int(rng.integers(0, d_max - k + 1))):
        sizes[rng.integers(k)] += 1
    return GroupPartition.contiguous(sizes.tolist())


def random_spec(rng, part: GroupPartition) -> NormSpec:
    alpha = rng.uniform(0.2, 3.0, part.n_groups)
    return NormSpec(alpha, float(rng.choice(EXPONENTS)), float(rng.choice(EXPONENTS)))


# -- norm duality ------------------------------------------------------------


def norm_gaps(n_triples: int = 1000, seed=0) -> dict[str, float]:
    """Worst relative violations of the norm duality properties.

    ``holder``: excess of ``|x'b|`` over ``||x|| ||b||_*``; ``witness``: gap
    between ``a'b`` and ``||b||_*`` for the witness ``a``, and of ``||a||``
    from 1; ``triangle``: ``||x + c x|| - (1 + c)||x||`` for ``c > 0``;
    ``round_trip``: distance of the dual of the dual from the original spec.
    """
    rng = make_rng(seed)
    worst = dict(holder=0.0, witness=0.0, triangle=0.0, round_trip=0.0)
    for _ in range(n_triples):
        part = random_partition(rng)
        spec = random_spec(rng, part)
        dual = dual_spec(spec)
        x, b = rng.standard_normal((2, part.d))
        nx, nb = group_norm(x, part, spec), group_norm(b, part, dual)
        worst["holder"] = max(worst["holder"], (abs(x @ b) - nx * nb) / (nx * nb))
        a = dual_witness(b, part, spec)
        worst["witness"] = max(worst["witness"], abs(a @ b - nb) / nb,
                               abs(group_norm(a, part, spec) - 1.0))
        c = float(rng.uniform(0.1, 10.0))
        worst["triangle"] = max(worst["triangle"],
                                abs(group_norm(x + c * x, part, spec) - (1 + c) * nx) / ((1 + c) * nx))
        back = dual_spec(dual)
        worst["round_trip"] = max(
            worst["round_trip"],
            float(np.max(np.abs(back.weights - spec.weights) / spec.weights)),
            0.0 if back.p == spec.p else abs(back.p - spec.p) / spec.p,
            0.0 if back.s == spec.s else abs(back.s - spec.s) / spec.s,
        )
    return worst


def check_norms(n_triples: int = 1000, seed=0) -> list[Check]:
    tol = dict(holder=1e-12, witness=1e-9, triangle=1e-12, round_trip=1e-9)
    gaps = norm_gaps(n_triples, seed)
    return [Check(f"norm {k}", gaps[k] <= tol[k], gaps[k], tol[k]) for k in tol]


# -- worst-case duality --------------------------------------------------------


def random_instance(rng, task: str, n_max: int = 50, d_max: int = 10):
    """Data set, coefficient vector and penalty spec for one duality check."""
    part = random_partition(rng, d_max)
    n = int(rng.integers(10, n_max + 1))
    X = rng.standard_normal((n, part.d))
    beta = rng.standard_normal(part.d)
    if task == "linear":
        y = X @ beta + rng.standard_normal(n)
    else:
        y = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-X @ beta)), 1.0, -1.0)
    return Dataset(X, y, part, task), beta, random_spec(rng, part)


def duality_gaps(task: str, n_instances: int = 50, seed=0, deltas=DELTAS,
                 delta_scale: float = 1.0) -> list[tuple[float, float, float]]:
    """``(delta, closed_form, adversary)`` per instance and budget.

    ``delta_scale`` multiplies the budget handed to the closed form only; a
    value other than 1 is a deliberately inconsistent fixture that the
    checks must reject.
    """
    rng = make_rng(seed)
    rho = 2 if task == "linear" else 1
    closed = worst_case_linear if task == "linear" else worst_case_logistic
    out = []
    for k in range(n_instances):
        data, beta, spec = random_instance(rng, task)
        cost = CostSpec.for_penalty(data.part, spec, rho)
        for delta in deltas:
            cf = closed(data, beta, delta * delta_scale, spec)
            adv = adversary_lower_bound(data, beta, delta, cost, seed=k)
            out.append((delta, cf, adv.value))
    return out


def check_duality(task: str, n_instances: int = 50, seed=0, delta_scale: float = 1.0) -> list[Check]:
    rows = np.array(duality_gaps(task, n_instances, seed, delta_scale=delta_scale))
    delta, cf, adv = rows.T
    excess = float(np.max(adv - cf))
    checks = [Check(f"{task} adversary below closed form", excess <= 1e-6, excess, 1e-6)]
    if task == "linear":
        rel = float(np.max(np.abs(cf - adv) / cf))
        checks.append(Check("linear adversary attains closed form", rel <= 1e-3, rel, 1e-3))
    else:
        small = delta == DELTAS[0]
        rel = float(np.max(np.abs(cf[small] - adv[small]) / cf[small]))
        checks.append(Check(f"logistic gap at delta={DELTAS[0]}", rel <= 5e-2, rel, 5e-2))
    return checks


# -- limit-law dominance -------------------------------------------------------


def dominance_quantiles(n: int = 300, n_mc: int = 2000, seed=0, levels=(0.5, 0.9, 0.95)):
    """L1 and L2 quantiles with Monte Carlo errors on a simulated design.

    Uses two covariates of degree three with both groups active, true
    errors and the sample covariance of the predictors. Returns rows
    ``(level, q1, se1, q2, se2)``.
    """
    cfg = SimulationConfig(n=n, seed=seed, n_covariates=2, active_groups=(1, 2))
    sim = simulate(cfg)
    data = sim.data
    e = data.y - data.X @ sim.beta_star
    spec = NormSpec.group_lasso(data.part)
    cov = estimate_covariance(data.X)
    l1 = sample_L1(sim.beta_star, e, data.X, data.part, spec, n_mc, seed, cov=cov)
    l2 = sample_L2(cov, data.part, spec, float(np.mean(np.abs(e))), float(np.mean(e * e)), n_mc, seed)
    return [(lv, l1.quantile(lv), l1.quantile_se(lv), l2.quantile(lv), l2.quantile_se(lv))
            for lv in levels]


def check_dominance(n_mc: int = 2000, seed=0) -> list[Check]:
    checks = []
    for lv, q1, s1, q2, s2 in dominance_quantiles(n_mc=n_mc, seed=seed):
        slack = q1 - q2 - 2.0 * math.hypot(s1, s2)
        checks.append(Check(f"L1 <= L2 at quantile {lv}", slack <= 0.0, slack, 0.0,
                            f"L1 {q1:.4g}, L2 {q2:.4g}"))
    return checks


def run_suite(quick: bool = False, seed=0, delta_scale: float = 1.0) -> list[Check]:
    """All checks; ``quick`` shrinks every suite to fit a few seconds."""
    if quick:
        return (check_norms(200, seed)
                + check_duality("linear", 10, seed, delta_scale)
                + check_duality("logistic", 10, seed, delta_scale)
                + check_dominance(300, seed))
    return (check_norms(1000, seed)
            + check_duality("linear", 50, seed, delta_scale)
            + check_duality("logistic", 50, seed, delta_scale)
            + check_dominance(2000, seed))
