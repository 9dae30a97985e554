"""Simulation designs, polynomial group expansion and CSV ingestion.

Randomness comes from numpy's Philox counter-based generator seeded through
``SeedSequence``, so every replication can get its own independent stream
and results are reproducible across platforms.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .group_norm import GroupPartition
from .solvers import Dataset


def make_rng(seed, *spawn_key: int) -> np.random.Generator:
    """Philox generator for ``seed``, optionally on a spawned child stream."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SimulationConfig:
    """Polynomial-group design with two active covariates.

    ``active_groups`` are 1-based covariate numbers. ``beta_draw`` is
    ``"normal"`` (iid N(0, 1) active coefficients) or a fixed sequence of
    ``degree * len(active_groups)`` values.
    """

    n: int = 100
    seed: int = 0
    task: str = "linear"
    n_covariates: int = 16
    degree: int = 3
    active_groups: tuple[int, ...] = (3, 5)
    beta_draw: str | Sequence[float] = "normal"
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.degree < 1 or self.n_covariates < 1:
            raise ValueError("n, degree and n_covariates must be >= 1")
        self.active_groups = tuple(int(g) for g in self.active_groups)
        if not all(1 <= g <= self.n_covariates for g in self.active_groups):
            raise ValueError("active groups must lie in 1..n_covariates")
        if self.task not in ("linear", "logistic"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


@dataclass
class Simulation:
    data: Dataset
    beta_star: np.ndarray
    covariates: np.ndarray = field(repr=False)


def polynomial_group_expand(raw, degree: int) -> tuple[np.ndarray, GroupPartition]:
    """Replace every column ``x`` by ``x, x**2, ..., x**degree``.

    The powers of one source column form one group, in source-column order.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if degree < 1:
        raise ValueError("degree must be >= 1")
    n, m = raw.shape
    out = np.empty((n, m * degree))
    for k in range(degree):
        out[:, k::degree] = raw ** (k + 1)
    part = GroupPartition(m * degree, [range(j * degree, (j + 1) * degree) for j in range(m)])
    return out, part


def draw_beta_star(config: SimulationConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Full-length coefficient vector, nonzero only on the active groups."""
    k = config.degree * len(config.active_groups)
    if isinstance(config.beta_draw, str):
        if config.beta_draw != "normal":
            raise ValueError(f"unknown beta_draw {config.beta_draw!r}")
        rng = rng or make_rng(config.seed, 0)
        vals = rng.standard_normal(k)
    else:
        vals = np.asarray(config.beta_draw, dtype=float)
        if vals.shape != (k,):
            raise ValueError(f"beta_draw needs {k} values")
    beta = np.zeros(config.n_covariates * config.degree)
    for a, g in enumerate(config.active_groups):
        beta[(g - 1) * config.degree : g * config.degree] = vals[a * config.degree : (a + 1) * config.degree]
    return beta


def simulate(config: SimulationConfig, beta_star=None) -> Simulation:
    """Draw a dataset from the shared-factor polynomial design.

    Covariates are ``(Z_i + W) / sqrt(2)`` with ``Z_1..Z_m, W`` iid standard
    normal; predictors are their powers ``1..degree``. The linear response
    adds ``noise_sd`` times standard normal noise; the logistic response is
    +1 with probability ``1 / (1 + exp(-X beta))``. ``beta_star`` is drawn
    from stream 0 of ``config.seed`` when not given, the data from stream 1,
    so a test set sharing coefficients is ``simulate(other_config, beta)``.
    """
    if beta_star is None:
        beta_star = draw_beta_star(config)
    beta_star = np.asarray(beta_star, dtype=float)
    rng = make_rng(config.seed, 1)
    Z = rng.standard_normal((config.n, config.n_covariates))
    W = rng.standard_normal((config.n, 1))
    cov = (Z + W) / math.sqrt(2.0)
    X, part = polynomial_group_expand(cov, config.degree)
    eta = X @ beta_star
    if config.task == "linear":
        y = eta + config.noise_sd * rng.standard_normal(config.n)
    else:
        prob = np.exp(-np.logaddexp(0.0, -eta))
        y = np.where(rng.random(config.n) < prob, 1.0, -1.0)
    return Simulation(Dataset(X, y, part, config.task), beta_star, cov)


def simulate_pair(config: SimulationConfig, n_test: int = 1000) -> tuple[Simulation, Simulation]:
    """Training set plus an independent test set with the same coefficients."""
    train = simulate(config)
    test_seed = np.random.SeedSequence(config.seed, spawn_key=(2,)).generate_state(1)[0]
    test = simulate(replace(config, n=n_test, seed=int(test_seed)), train.beta_star)
    return train, test


# -- CSV ingestion -------------------------------------------------------------

_DECIMAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class DataFormatError(ValueError):
    pass


@dataclass
class RawTable:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    response: str


def _parse_number(text: str, row: int, col: str) -> float:
    t = text.strip()
    if not _DECIMAL.match(t):
        raise DataFormatError(f"row {row}, column {col!r}: cannot parse {text!r} as a number")
    return float(t)


def load_csv(path, response_column: str, positive_label: str | None = None) -> RawTable:
    """Read a headed, comma-separated UTF-8 file.

    All columns except ``response_column`` must hold plain decimals. With
    ``positive_label`` the response is categorical with at most two values and
    is mapped to +1 (positive) / -1; otherwise it is parsed as a number.
    Row numbers in errors count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if response_column not in header:
            raise DataFormatError(f"{path}: no column named {response_column!r}")
        ri = header.index(response_column)
        features = [h for i, h in enumerate(header) if i != ri]
        rows, labels = [], []
        for rownum, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataFormatError(
                    f"row {rownum}: expected {len(header)} fields, found {len(rec)}"
                )
            rows.append(
                [_parse_number(c, rownum, header[i]) for i, c in enumerate(rec) if i != ri]
            )
            labels.append((rownum, rec[ri].strip()))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    X = np.array(rows, dtype=float)
    if positive_label is None:
        y = np.array([_parse_number(t, r, response_column) for r, t in labels])
    else:
        distinct = sorted({t for _, t in labels})
        if positive_label not in distinct:
            raise DataFormatError(f"positive label {positive_label!r} never occurs")
        if len(distinct) > 2:
            raise DataFormatError(f"response has more than two labels: {distinct}")
        y = np.array([1.0 if t == positive_label else -1.0 for _, t in labels])
    return RawTable(X, y, features, response_column)


def read_groups(path) -> GroupPartition:
    """Partition from a sidecar JSON ``{"groups": [[1, 2, 3], ...]}`` (1-based)."""
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        groups = spec["groups"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: unreadable group file ({exc})") from exc
    zero_based = [[int(i) - 1 for i in g] for g in groups]
    d = sum(len(g) for g in zero_based)
    try:
        return GroupPartition(d, zero_based)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_dataset(data: Dataset, csv_path, groups_path=None, response: str = "y") -> None:
    """Write predictors and response as CSV plus the 1-based group sidecar."""
    csv_path = Path(csv_path)
    groups_path = Path(groups_path) if groups_path else csv_path.with_suffix(".groups.json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(data.d)] + [response])
        for row, target in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    groups_path.write_text(
        json.dumps({"groups": [[i + 1 for i in g] for g in data.part.groups]}), encoding="utf-8"
    )


def read_dataset(csv_path, groups_path, response: str = "y", task: str = "linear",
                 positive_label: str | None = None) -> Dataset:
    """Inverse of ``write_dataset``."""
    table = load_csv(csv_path, response, positive_label)
    part = read_groups(groups_path)
    if part.d != table.X.shape[1]:
        raise DataFormatError(
            f"group file covers {part.d} predictors but the CSV has {table.X.shape[1]}"
        )
    return Dataset(table.X, table.y, part, task)


# -- splitting ---------------------------------------------------------------


@dataclass
class Standardization:
    """Column centring/scaling fitted on a training split."""

    mean: np.ndarray
    scale: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def invert(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean


def split_standardize(data: Dataset, train_n: int, seed, standardize: bool = True):
    """Random train/test split, optionally standardising with train statistics.

    Returns ``(train, test, transform)``; ``transform`` is the identity when
    ``standardize`` is false. Constant training columns are centred but not
    scaled, and noted in ``transform.warnings``.
    """
    if not 1 <= train_n < data.n:
        raise ValueError(f"train_n must be in 1..{data.n - 1}")
    perm = make_rng(seed).permutation(data.n)
    tr, te = np.sort(perm[:train_n]), np.sort(perm[train_n:])
    Xtr, Xte = data.X[tr], data.X[te]
    transform = fit_standardization(Xtr) if standardize else identity_transform(data.d)
    train = Dataset(transform.apply(Xtr), data.y[tr], data.part, data.task)
    test = Dataset(transform.apply(Xte), data.y[te], data.part, data.task)
    return train, test, transform


def fit_standardization(X) -> Standardization:
    """Column means and (population) standard deviations of ``X``.

    Constant columns are centred but not scaled, and noted in ``warnings``.
    """
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    warnings = [f"column {i + 1} is constant on the training split; left unscaled"
                for i in np.flatnonzero(const)]
    return Standardization(mean, np.where(const, 1.0, scale), warnings)


def identity_transform(d: int) -> Standardization:
    return Standardization(np.zeros(d), np.ones(d))


def standardize_pair(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset, Standardization]:
    """Standardise both sets with the training statistics."""
    tf = fit_standardization(train.X)
    return (Dataset(tf.apply(train.X), train.y, train.part, train.task),
            Dataset(tf.apply(test.X), test.y, test.part, test.task), tf)
