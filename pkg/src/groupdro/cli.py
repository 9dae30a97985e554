"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 bad input,
3 numerical failure (non-convergence, degenerate fit, or more than 10% of
experiment replications failing).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cv_baseline import cross_validate, default_grid
from .data_gen import DataFormatError, SimulationConfig, read_dataset, simulate, write_dataset
from .experiment import ExperimentConfig, format_table, run_experiment, write_outputs
from .rwpi_select import select_lambda
from .solvers import SolverOptions, fit_grlasso_logistic, fit_gsrl_linear, kkt_violation
from .verification import run_suite

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
MAX_FAILURE_RATE = 0.10
FULL_REPLICATIONS = 200

log = logging.getLogger("groupdro")


class InputError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    if not args.data:
        raise InputError("--data is required")
    groups = args.groups or str(Path(args.data).with_suffix(".groups.json"))
    for path, flag in ((args.data, "--data"), (groups, "--groups")):
        if not Path(path).is_file():
            raise InputError(f"{flag}: file {path} not found")
    return read_dataset(args.data, groups, args.response, args.task, args.positive_label)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _selection_dict(sel) -> dict:
    return {k: v for k, v in dict(
        task=sel.task, chi=sel.chi, n_mc=sel.n_mc, seed=sel.seed, eta_hat=sel.eta_hat,
        eta_se=sel.eta_se, lam=sel.lam, moment_ratio=sel.moment_ratio,
        mean_abs=sel.mean_abs, mean_sq=sel.mean_sq,
    ).items() if v is not None}


# -- subcommands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    data = _load(args)
    if (args.lam is None) == (not args.rwpi):
        raise InputError("give exactly one of --lambda and --rwpi")
    report = {}
    if args.rwpi:
        sel = select_lambda(data, args.chi, args.mc, args.seed, fit_intercept=args.intercept)
        lam = sel.lam
        report["selection"] = _selection_dict(sel)
    else:
        lam = args.lam
        if lam < 0:
            raise InputError("--lambda must be nonnegative")
    solver = fit_gsrl_linear if data.task == "linear" else fit_grlasso_logistic
    fit = solver(data, lam, SolverOptions(max_iter=args.max_iter), fit_intercept=args.intercept)
    out = _out_dir(args)
    with open(out / "beta.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "group", "value"])
        labels = data.part.labels
        for i, v in enumerate(fit.beta):
            w.writerow([i + 1, int(labels[i]) + 1, repr(float(v))])
    report.update(task=data.task, lam=fit.lam, intercept=fit.intercept, objective=fit.objective,
                  sigma_hat=fit.sigma_hat, iterations=fit.iterations, converged=fit.converged,
                  kkt_violation=kkt_violation(data, fit),
                  nonzero_groups=int(np.count_nonzero(data.part.block_norms(fit.beta, 2.0))))
    _write_json(out / "fit.json", report)
    print(f"lambda={fit.lam:.6g} objective={fit.objective:.10g} "
          f"nonzero_groups={report['nonzero_groups']} converged={fit.converged}")
    return EXIT_OK if fit.converged else EXIT_NUMERIC


def cmd_select(args) -> int:
    data = _load(args)
    sel = select_lambda(data, args.chi, args.mc, args.seed, fit_intercept=args.intercept)
    info = _selection_dict(sel)
    if args.out:
        _write_json(_out_dir(args) / "selection.json", info)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def cmd_cv(args) -> int:
    data = _load(args)
    grid = default_grid(data, length=args.grid_length, fit_intercept=args.intercept)
    res = cross_validate(data, k=args.folds, grid=grid, seed=args.seed,
                         fit_intercept=args.intercept, n_jobs=args.jobs)
    out = _out_dir(args)
    kept = [f for f in range(args.folds) if f not in res.skipped]
    with open(out / "cv_losses.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fold"] + [repr(float(g)) for g in res.lambda_grid])
        for f, row in zip(kept, res.fold_losses):
            w.writerow([f + 1] + [repr(float(v)) for v in row])
    _write_json(out / "cv.json", dict(best_lambda=res.best_lambda, one_se_lambda=res.one_se_lambda,
                                      k_effective=res.k_effective,
                                      skipped_folds=[f + 1 for f in res.skipped]))
    print(f"best_lambda={res.best_lambda:.6g} one_se_lambda={res.one_se_lambda:.6g} "
          f"folds_used={res.k_effective}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SimulationConfig(n=args.n, seed=args.seed, task=args.task, noise_sd=args.noise_sd)
    sim = simulate(cfg)
    out = _out_dir(args)
    write_dataset(sim.data, out / "data.csv", out / "data.groups.json", args.response)
    (out / "beta_star.csv").write_text(
        "value\n" + "".join(f"{float(v)!r}\n" for v in sim.beta_star), encoding="utf-8")
    print(f"wrote {sim.data.n} rows x {sim.data.d} predictors to {out / 'data.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    checks = run_suite(args.quick, args.seed, args.delta_mismatch)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed "
          f"in {time.perf_counter() - t0:.1f} s")
    return EXIT_VERIFY if failed else EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    overrides = dict(task=args.task_opt, seed=args.seed_opt, chi=args.chi_opt, n_mc=args.mc_opt,
                     folds=args.folds_opt, jobs=args.jobs, out=args.out, data=args.data,
                     replications=FULL_REPLICATIONS if args.full else args.replications,
                     sizes=args.sizes, fit_intercept=args.intercept_opt,
                     response=args.response_opt, positive_label=args.positive_label)
    if args.config:
        if not Path(args.config).is_file():
            raise InputError(f"--config: file {args.config} not found")
        return ExperimentConfig.from_json(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    csv_path, txt_path = write_outputs(result, cfg, cfg.out or ".")
    print(format_table(result.rows, cfg.task))
    print(f"{result.attempted - len(result.failures)}/{result.attempted} replications "
          f"in {time.perf_counter() - t0:.1f} s; tables in {csv_path} and {txt_path}")
    for n, rep, err in result.failures:
        print(f"replication n={n} #{rep} failed: {err}", file=sys.stderr)
    return EXIT_NUMERIC if result.failure_rate > MAX_FAILURE_RATE else EXIT_OK


# -- parser ----------------------------------------------------------------------


def _data_flags(p, task_default="linear"):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--groups", help="group sidecar JSON (default: <data>.groups.json)")
    p.add_argument("--task", choices=("linear", "logistic"), default=task_default)
    p.add_argument("--response", default="y", help="response column name")
    p.add_argument("--positive-label", help="categorical response value mapped to +1")
    p.add_argument("--intercept", action="store_true", help="fit an unpenalised intercept")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")


def _rwpi_flags(p):
    p.add_argument("--chi", type=float, default=0.05, help="confidence complement")
    p.add_argument("--mc", type=int, default=100_000, help="Monte Carlo draws")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupdro", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a penalised model")
    _data_flags(p)
    _rwpi_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, help="penalty level")
    p.add_argument("--rwpi", action="store_true", help="select the penalty by RWPI")
    p.add_argument("--max-iter", type=int, default=10000)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-lambda", help="RWPI penalty level")
    _data_flags(p)
    _rwpi_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cv", help="cross-validated penalty level")
    _data_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid-length", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="draw a data set from the polynomial design")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--task", choices=("linear", "logistic"), default="linear")
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--response", default="y")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-duality", help="run the self-check suites")
    p.add_argument("--quick", action="store_true", help="small suite, a few seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta-mismatch", type=float, default=1.0,
                   help="scale the closed-form budget (a value != 1 must fail)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="replicated RWPI / CV / unpenalised comparison")
    p.add_argument("--config", help="JSON file of experiment settings; flags override it")
    p.add_argument("--task", dest="task_opt", choices=("linear", "logistic"))
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--replications", type=int)
    p.add_argument("--full", action="store_true", help=f"{FULL_REPLICATIONS} replications")
    p.add_argument("--chi", dest="chi_opt", type=float)
    p.add_argument("--mc", dest="mc_opt", type=int)
    p.add_argument("--folds", dest="folds_opt", type=int)
    p.add_argument("--seed", dest="seed_opt", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--data", help="real data CSV split instead of simulating")
    p.add_argument("--response", dest="response_opt")
    p.add_argument("--positive-label")
    p.add_argument("--intercept", dest="intercept_opt", action=argparse.BooleanOptionalAction)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
