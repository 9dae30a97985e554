"""Groupwise alpha-(p, s) norms, their duals, and Hoelder equality witnesses.

For a partition ``G_1, ..., G_m`` of the coordinates and positive weights
``alpha``, the alpha-(p, s) norm of ``x`` is the ``s``-norm of the vector of
weighted block norms ``alpha_j * ||x(G_j)||_p``. Its dual is the
``alpha^-1``-(q, t) norm with ``q``, ``t`` the Hoelder conjugates of ``p``,
``s``.

Exponents are plain floats; ``math.inf`` stands for the max-norm and every
function branches on it explicitly instead of feeding it through power
formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INF = math.inf


def _check_exponent(e: float, name: str) -> float:
    e = float(e)
    if not e >= 1.0:  # also rejects nan
        raise ValueError(f"{name} must be >= 1 (or inf), got {e}")
    return e


def conjugate(e: float) -> float:
    """Hoelder conjugate exponent ``e / (e - 1)``, with ``1 <-> inf``."""
    e = _check_exponent(e, "exponent")
    if e == 1.0:
        return INF
    if e == INF:
        return 1.0
    if e == 2.0:
        return 2.0
    return e / (e - 1.0)


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint cover of ``range(d)`` by non-empty index groups (0-based)."""

    d: int
    groups: tuple[tuple[int, ...], ...]
    _index: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)
    _labels: np.ndarray = field(init=False, repr=False, compare=False)
    _member: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, d: int, groups: Sequence[Sequence[int]]):
        d = int(d)
        groups = tuple(tuple(int(i) for i in g) for g in groups)
        if d < 1:
            raise ValueError("partition needs at least one coordinate")
        labels = np.full(d, -1, dtype=np.intp)
        for j, g in enumerate(groups):
            if len(g) == 0:
                raise ValueError(f"group {j} is empty")
            for i in g:
                if not 0 <= i < d:
                    raise ValueError(f"index {i} in group {j} is outside 0..{d - 1}")
                if labels[i] != -1:
                    raise ValueError(f"index {i} appears in groups {labels[i]} and {j}")
                labels[i] = j
        missing = np.flatnonzero(labels == -1)
        if missing.size:
            raise ValueError(f"indices {missing.tolist()} are not covered by any group")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "_index", tuple(np.asarray(g, dtype=np.intp) for g in groups))
        object.__setattr__(self, "_labels", labels)
        member = np.zeros((d, len(groups)))
        member[np.arange(d), labels] = 1.0
        object.__setattr__(self, "_member", member)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "GroupPartition":
        """Build a partition from one group label per coordinate.

        Groups are ordered by first appearance of their label.
        """
        labels = list(labels)
        order: dict = {}
        for i, lab in enumerate(labels):
            order.setdefault(lab, []).append(i)
        return cls(len(labels), list(order.values()))

    @classmethod
    def singletons(cls, d: int) -> "GroupPartition":
        return cls(d, [[i] for i in range(d)])

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "GroupPartition":
        """Consecutive blocks with the given sizes."""
        groups, start = [], 0
        for g in sizes:
            groups.append(list(range(start, start + int(g))))
            start += int(g)
        return cls(start, groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=np.intp)

    @property
    def index(self) -> tuple[np.ndarray, ...]:
        return self._index

    @property
    def labels(self) -> np.ndarray:
        """Group number of every coordinate."""
        return self._labels.copy()

    def block_norms(self, x: np.ndarray, p: float) -> np.ndarray:
        """``||x(G_j)||_p`` for every group; works row-wise on 2-D input."""
        x = np.asarray(x, dtype=float)
        if p == 2.0:
            return np.sqrt((x * x) @ self._member)
        if p == 1.0:
            return np.abs(x) @ self._member
        out = np.empty(x.shape[:-1] + (self.n_groups,))
        for j, idx in enumerate(self._index):
            out[..., j] = _pnorm(x[..., idx], p)
        return out


def _pnorm(v: np.ndarray, p: float) -> np.ndarray:
    a = np.abs(v)
    if p == INF:
        return a.max(axis=-1)
    if p == 1.0:
        return a.sum(axis=-1)
    if p == 2.0:
        return np.sqrt(np.einsum("...i,...i->...", a, a))
    # scale by the max entry so large p does not overflow
    m = a.max(axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return m[..., 0] * np.power(np.power(a / safe, p).sum(axis=-1), 1.0 / p)


@dataclass(frozen=True)
class NormSpec:
    """Weights ``alpha`` (one per group) and exponents ``p`` (inner), ``s`` (outer)."""

    alpha: tuple[float, ...]
    p: float = 2.0
    s: float = 1.0
    # the spec this one was dualised from, so dualising twice is exact
    _dual_of: "NormSpec | None" = field(default=None, repr=False, compare=False)

    def __init__(self, alpha: Sequence[float], p: float = 2.0, s: float = 1.0):
        alpha = tuple(float(a) for a in np.atleast_1d(np.asarray(alpha, dtype=float)))
        if len(alpha) == 0:
            raise ValueError("alpha must have at least one entry")
        if not all(a > 0 and math.isfinite(a) for a in alpha):
            raise ValueError("alpha entries must be finite and strictly positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "p", _check_exponent(p, "p"))
        object.__setattr__(self, "s", _check_exponent(s, "s"))
        object.__setattr__(self, "_dual_of", None)

    @classmethod
    def group_lasso(cls, part: GroupPartition) -> "NormSpec":
        """The sqrt(g)-(2, 1) norm penalised by group lasso estimators."""
        return cls(np.sqrt(part.sizes), p=2.0, s=1.0)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.alpha)


def _check(x: np.ndarray, part: GroupPartition, spec: NormSpec) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != part.d:
        raise ValueError(f"vector has length {x.shape[-1]}, partition expects {part.d}")
    if len(spec.alpha) != part.n_groups:
        raise ValueError(
            f"spec has {len(spec.alpha)} weights for {part.n_groups} groups"
        )
    return x


def group_norm(x, part: GroupPartition, spec: NormSpec):
    """alpha-(p, s) norm of ``x``.

    Parameters
    ----------
    x : array of shape (d,) or (m, d)
        Vector, or a stack of vectors evaluated row by row.
    part : GroupPartition
    spec : NormSpec

    Returns
    -------
    float or ndarray of shape (m,)
    """
    x = _check(x, part, spec)
    scaled = spec.weights * part.block_norms(x, spec.p)
    out = _pnorm(scaled, spec.s)
    return float(out) if np.ndim(out) == 0 else out


def dual_spec(spec: NormSpec) -> NormSpec:
    """Spec of the dual norm: reciprocal weights and conjugate exponents."""
    if spec._dual_of is not None:
        return spec._dual_of
    dual = NormSpec(1.0 / spec.weights, conjugate(spec.p), conjugate(spec.s))
    object.__setattr__(dual, "_dual_of", spec)
    return dual


def _lp_witness(v: np.ndarray, p: float) -> np.ndarray:
    """Unit ``p``-norm vector ``u`` with ``u @ v = ||v||_q``; ``v`` nonzero."""
    q = conjugate(p)
    if p == 1.0:
        u = np.zeros_like(v)
        k = int(np.argmax(np.abs(v)))  # lowest index among ties
        u[k] = np.sign(v[k])
        return u
    if p == INF:
        return np.sign(v)
    a = np.abs(v) / _pnorm(v, q)
    return np.sign(v) * np.power(a, q - 1.0)


def dual_witness(b, part: GroupPartition, spec: NormSpec) -> np.ndarray:
    """Vector attaining the dual norm of ``b``.

    Returns ``a`` with ``group_norm(a, part, spec) == 1`` and
    ``a @ b == group_norm(b, part, dual_spec(spec))``. For interior exponents
    the entries are

        a(G_j)_i = sign(b_i) / alpha_j * |b_i / alpha_j|^(q/p)
                   / (||b(G_j) / alpha_j||_q^(q/p - t/s) * ||b||_dual^(t/s)),

    evaluated in a factored form that cannot overflow. Boundary exponents
    (1 or inf) pick the largest entry or group, lowest index first. Groups
    where ``b`` vanishes get zero entries.
    """
    b = _check(b, part, spec)
    if b.ndim != 1:
        raise ValueError("dual_witness expects a single vector")
    if not np.any(b):
        raise ValueError("dual witness is undefined for b = 0")
    q = conjugate(spec.p)
    alpha = spec.weights
    blocks = part.block_norms(b, q) / alpha  # dual block norms
    # outer weights w with ||w||_s = 1 and w @ blocks = ||blocks||_t
    w = _lp_witness(blocks, spec.s)
    a = np.zeros(part.d)
    for j, idx in enumerate(part.index):
        if w[j] == 0.0 or blocks[j] == 0.0:
            continue
        a[idx] = (w[j] / alpha[j]) * _lp_witness(b[idx], spec.p)
    return a
