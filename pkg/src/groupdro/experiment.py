"""Replicated comparison of RWPI, cross-validation and unpenalised fits.

For every sample size and replication a training set is simulated (or a
real data set is split), the three estimators are fitted on it, and their
training and test losses are recorded. The summary is one row per method
and sample size with the mean and standard deviation over replications.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cv_baseline import cross_validate, default_grid, holdout_loss
from .data_gen import (
    SimulationConfig,
    load_csv,
    polynomial_group_expand,
    simulate_pair,
    split_standardize,
    standardize_pair,
)
from .rwpi_select import select_lambda
from .solvers import Dataset, SolverOptions, fit_grlasso_logistic, fit_gsrl_linear

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("method", "n", "train_mean", "train_sd", "test_mean", "test_sd")
METHOD_NAMES = {
    "linear": ("RWPI GSRL", "CV GSRL", "OLS"),
    "logistic": ("RWPI GR-Lasso", "CV GR-Lasso", "LR"),
}
# iteration cap for the unpenalised logistic fit, which diverges on separable data
UNPENALIZED_MAX_ITER = 2000


@dataclass
class ExperimentConfig:
    """Settings of one table.

    With ``data`` set, replications split that CSV file (``response``,
    ``positive_label``, polynomial ``degree``, ``train_n`` training rows)
    instead of simulating, and ``sizes`` is ignored.
    """

    task: str = "linear"
    sizes: tuple[int, ...] = (50, 100, 500, 1000)
    replications: int = 20
    chi: float = 0.05
    n_mc: int = 100_000
    folds: int = 5
    grid_length: int = 50
    seed: int = 0
    n_test: int = 1000
    noise_sd: float = 1.0
    fit_intercept: bool = True
    standardize: bool = True
    jobs: int = 1
    out: str | None = None
    data: str | None = None
    response: str = "y"
    positive_label: str | None = None
    degree: int = 3
    train_n: int = 112

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        if self.task not in METHOD_NAMES:
            raise ValueError(f"unknown task {self.task!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.sizes and self.data is None:
            raise ValueError("need at least one sample size")
        if self.data is not None and not Path(self.data).is_file():
            raise FileNotFoundError(f"data file {self.data} does not exist")

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        """Load a JSON object of fields; non-``None`` ``overrides`` win."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class TableRow:
    method: str
    n: int
    train_mean: float
    train_sd: float
    test_mean: float
    test_sd: float


@dataclass
class ExperimentResult:
    rows: list[TableRow]
    losses: dict = field(repr=False)
    failures: list[tuple[int, int, str]] = field(default_factory=list)
    attempted: int = 0

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.attempted if self.attempted else 0.0

    def row(self, method: str, n: int) -> TableRow:
        for r in self.rows:
            if r.method == method and r.n == n:
                return r
        raise KeyError((method, n))


def replication_seed(base: int, n: int, rep: int) -> int:
    """Independent 32-bit seed for replication ``rep`` at sample size ``n``."""
    return int(np.random.SeedSequence(base, spawn_key=(n, rep)).generate_state(1)[0])


def _ols(train: Dataset, fit_intercept: bool):
    X = np.hstack([train.X, np.ones((train.n, 1))]) if fit_intercept else train.X
    coef = np.linalg.lstsq(X, train.y, rcond=None)[0]  # minimum norm when n < d
    return (coef[:-1], float(coef[-1])) if fit_intercept else (coef, 0.0)


def _replicate_data(cfg: ExperimentConfig, n: int, seed: int, table=None):
    if table is not None:
        X, part = polynomial_group_expand(table.X, cfg.degree)
        full = Dataset(X, table.y, part, cfg.task)
        train, test, _ = split_standardize(full, cfg.train_n, seed, cfg.standardize)
        return train, test
    sim_cfg = SimulationConfig(n=n, seed=seed, task=cfg.task, noise_sd=cfg.noise_sd)
    train, test = simulate_pair(sim_cfg, cfg.n_test)
    if cfg.standardize:
        tr, te, _ = standardize_pair(train.data, test.data)
        return tr, te
    return train.data, test.data


def run_replication(cfg: ExperimentConfig, n: int, rep: int, table=None) -> dict:
    """Train and test loss of every method on one replication."""
    seed = replication_seed(cfg.seed, n, rep)
    train, test = _replicate_data(cfg, n, seed, table)
    rwpi_name, cv_name, plain_name = METHOD_NAMES[cfg.task]
    fit_fn = fit_gsrl_linear if cfg.task == "linear" else fit_grlasso_logistic
    sel = select_lambda(train, cfg.chi, cfg.n_mc, seed, fit_intercept=cfg.fit_intercept)
    grid = default_grid(train, length=cfg.grid_length, fit_intercept=cfg.fit_intercept)
    cv = cross_validate(train, k=cfg.folds, grid=grid, seed=seed, fit_intercept=cfg.fit_intercept)
    out = {}
    for name, lam in ((rwpi_name, sel.lam), (cv_name, cv.best_lambda)):
        fit = fit_fn(train, lam, fit_intercept=cfg.fit_intercept)
        out[name] = (holdout_loss(cfg.task, train, fit.beta, fit.intercept),
                     holdout_loss(cfg.task, test, fit.beta, fit.intercept))
    if cfg.task == "linear":
        beta, b0 = _ols(train, cfg.fit_intercept)
    else:
        fit = fit_grlasso_logistic(train, 0.0, SolverOptions(max_iter=UNPENALIZED_MAX_ITER),
                                   fit_intercept=cfg.fit_intercept)
        beta, b0 = fit.beta, fit.intercept
    out[plain_name] = (holdout_loss(cfg.task, train, beta, b0),
                       holdout_loss(cfg.task, test, beta, b0))
    return out


def _safe_replication(cfg, n, rep, table):
    try:
        return run_replication(cfg, n, rep, table), None
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (size, replication) pair and summarise by method and size.

    Failed replications are logged and skipped; the caller decides whether
    the failure rate is acceptable.
    """
    table = None
    sizes = cfg.sizes
    if cfg.data is not None:
        table = load_csv(cfg.data, cfg.response, cfg.positive_label)
        sizes = (cfg.train_n,)
    tasks = [(n, r) for n in sizes for r in range(cfg.replications)]
    if cfg.jobs != 1 and len(tasks) > 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=cfg.jobs)(
            delayed(_safe_replication)(cfg, n, r, table) for n, r in tasks
        )
    else:
        outcomes = []
        for n, r in tasks:
            outcomes.append(_safe_replication(cfg, n, r, table))
            log.info("n=%d replication %d done%s", n, r,
                     "" if outcomes[-1][1] is None else f" (failed: {outcomes[-1][1]})")
    losses: dict = {}
    failures = []
    for (n, r), (res, err) in zip(tasks, outcomes):
        if err is not None:
            failures.append((n, r, err))
            continue
        for method, pair in res.items():
            losses.setdefault((method, n), []).append(pair)
    rows = []
    for n in sizes:
        for method in METHOD_NAMES[cfg.task]:
            vals = np.array(losses.get((method, n), []), dtype=float).reshape(-1, 2)
            if vals.shape[0] == 0:
                continue
            sd = vals.std(axis=0, ddof=1) if vals.shape[0] > 1 else np.zeros(2)
            rows.append(TableRow(method, n, float(vals[:, 0].mean()), float(sd[0]),
                                 float(vals[:, 1].mean()), float(sd[1])))
    return ExperimentResult(rows, losses, failures, len(tasks))


# -- table output --------------------------------------------------------------


def table_to_csv(rows) -> str:
    """CSV text with full-precision floats (``repr``), so parsing is lossless."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([r.method, r.n] + [repr(float(getattr(r, c))) for c in TABLE_COLUMNS[2:]])
    return buf.getvalue()


def table_from_csv(text: str) -> list[TableRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
        raise ValueError(f"expected columns {TABLE_COLUMNS}")
    return [TableRow(r["method"], int(r["n"]), *(float(r[c]) for c in TABLE_COLUMNS[2:]))
            for r in reader]


def format_table(rows, task: str) -> str:
    """Aligned text: one line per sample size, ``mean +- sd`` per method and split."""
    methods = [m for m in METHOD_NAMES[task] if any(r.method == m for r in rows)]
    sizes = sorted({r.n for r in rows})
    cell = "{:.3f} +- {:.3f}"
    header = ["n"] + [f"{m} {part}" for m in methods for part in ("train", "test")]
    lines = [header]
    for n in sizes:
        line = [str(n)]
        for m in methods:
            match = [r for r in rows if r.method == m and r.n == n]
            if match:
                r = match[0]
                line += [cell.format(r.train_mean, r.train_sd), cell.format(r.test_mean, r.test_sd)]
            else:
                line += ["-", "-"]
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in lines)


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"table_{cfg.task}.csv"
    txt_path = out / f"table_{cfg.task}.txt"
    csv_path.write_text(table_to_csv(result.rows), encoding="utf-8")
    txt_path.write_text(format_table(result.rows, cfg.task) + "\n", encoding="utf-8")
    return csv_path, txt_path

