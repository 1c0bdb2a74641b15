"""Command-line entry points: simulate, fit, predict, sweep, select-d, distance, study.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import coloredlogs
import numpy as np
import pandas as pd
from tabulate import tabulate

from src.config import LoggingSettings, default_workers, load_logging_settings, load_sweep_config, proportional_grid
from src.em import fit
from src.errors import ConfigError, DataError, LdsError, NumericalError, UsageError
from src.forecast import confidence_band, k_step_predict, predictive_variance
from src.metrics import amari_error, prediction_scores, subspace_distance
from src.params import Hyperparams, ObservationSeries
from src.selection import lambda_sweep, profile_likelihood_d, singular_values
from src.simulator import SimConfig, generate_params, simulate_series
from src.storage import (
    ModelArchive,
    archive_from_fit,
    is_archive,
    load_archive,
    load_matrix,
    save_archive,
    save_matrix,
    save_table,
)
from src.studies import estimation_grid_study, reproducibility_study, summarize_estimation


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(settings: LoggingSettings) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_lds_file_log", False):
            root.removeHandler(handler)
            handler.close()
    coloredlogs.install(level=settings.level, fmt=LOG_FORMAT, stream=sys.stderr)
    if settings.log_file.strip():
        file_handler = logging.FileHandler(settings.log_file.strip(), encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler._lds_file_log = True
        root.addHandler(file_handler)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _provenance(args: argparse.Namespace, **extra) -> dict[str, Any]:
    arguments = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in sorted(vars(args).items())
        if key not in {"handler", "log_level", "log_file"}
    }
    return {"command": args.command, "args": arguments, **extra}


def _load_observations(path: str) -> ObservationSeries:
    return ObservationSeries(load_matrix(path))


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        cfg = SimConfig(
            p=args.p,
            d=args.d,
            T=args.T,
            sparsity_level=args.sparsity,
            diag_boost=args.diag_boost,
            r_scale=args.r_scale,
            seed=args.seed,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc

    params = generate_params(cfg)
    X, Y = simulate_series(params, cfg.T, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.format == "csv" else ".ldsm"
    provenance = _provenance(args, seed=cfg.seed)

    save_matrix(out / f"Y{suffix}", Y.Y, provenance)
    save_matrix(out / f"X{suffix}", X.X, provenance)
    truth = ModelArchive(
        params=params,
        T=cfg.T,
        provenance=provenance,
        extras={"x_T": X.X[:, -1], "V_T": np.zeros((cfg.d, cfg.d))},
    )
    save_archive(out / "truth.ldsa", truth)
    logging.info("Wrote Y %s, X %s and true parameters to %s", Y.Y.shape, X.X.shape, out)
    return EXIT_OK


def _fit_report(report, hp: Hyperparams, Y: ObservationSeries) -> str:
    rows = [
        [entry["iteration"], entry["objective"], report.marginal_trace[i], entry["change"]]
        for i, entry in enumerate(report.history)
    ]
    table = tabulate(
        rows,
        headers=["iter", "objective", "penalized -loglik", "param change"],
        floatfmt=".10g",
    )
    lines = [
        f"p={Y.p} T={Y.T} d={hp.d} lambda_A={hp.lambda_A:g} lambda_C={hp.lambda_C:g} c_penalty={hp.c_penalty}",
        table,
        f"final penalized -loglik: {report.marginal_trace[-1]:.10g}",
        f"converged: {report.converged} after {report.iterations_run} iterations",
        f"fit time: {report.elapsed_seconds:.3f} s",
    ]
    if report.jitter_steps:
        lines.append(f"jitter applied at {report.jitter_steps} smoother steps")
    return "\n".join(lines)


def cmd_fit(args: argparse.Namespace) -> int:
    Y = _load_observations(args.data)
    try:
        hp = Hyperparams(
            lambda_A=args.lambda_a,
            lambda_C=args.lambda_c,
            d=args.d,
            max_em_iters=args.max_iters,
            max_inner_iters=args.max_inner_iters,
            em_tol=args.tol,
            c_penalty=args.c_penalty,
            r_uses_old_c=args.r_uses_old_c,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    if hp.d > min(Y.p, Y.T):
        raise DataError(f"latent dimension d={hp.d} exceeds min(p, T)={min(Y.p, Y.T)}")

    started = _utc_now()
    report = fit(Y, hp)
    finished = _utc_now()

    archive = archive_from_fit(report, hp, Y.T, _provenance(args, started=started, finished=finished))
    save_archive(args.out, archive)
    text = _fit_report(report, hp, Y)
    print(text)
    if args.report:
        Path(args.report).write_text(f"started: {started}\nfinished: {finished}\n{text}\n", encoding="utf-8")
    logging.info("Saved model archive to %s", args.out)
    return EXIT_OK


def _horizon_scores(truth: np.ndarray, prediction: np.ndarray, prefix: str) -> dict[str, list[float]]:
    mse, corr = [], []
    for i in range(prediction.shape[1]):
        scores = prediction_scores(truth[:, i], prediction[:, i])
        mse.append(scores.mse)
        corr.append(scores.correlation)
    return {f"{prefix}mse": mse, f"{prefix}correlation": corr}


def cmd_predict(args: argparse.Namespace) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    archive = load_archive(args.model)
    params = archive.params
    hp = archive.hyperparams_obj()
    if hp is not None:
        logging.info("Forecasting from a d=%d fit (lambda_A=%g, lambda_C=%g)", hp.d, hp.lambda_A, hp.lambda_C)
    if "x_T" not in archive.extras:
        raise DataError(f"{args.model} has no final state estimate to forecast from")
    prediction = k_step_predict(params.A, params.C, archive.extras["x_T"], args.steps)
    provenance = _provenance(args)
    save_matrix(args.out, prediction, provenance)

    columns: dict[str, Any] = {"horizon": list(range(1, args.steps + 1))}
    baseline = None
    if args.baseline == "svd":
        if "baseline_A" not in archive.extras:
            raise UsageError(f"{args.model} carries no SVD baseline; it was not produced by 'fit'")
        baseline = k_step_predict(
            archive.extras["baseline_A"], archive.extras["baseline_C"], archive.extras["baseline_x_T"], args.steps
        )
        save_matrix(Path(args.out).with_name(f"{Path(args.out).stem}_baseline{Path(args.out).suffix}"), baseline, provenance)

    if args.truth:
        truth = load_matrix(args.truth)
        if truth.shape[0] != params.p or truth.shape[1] < args.steps:
            raise UsageError(f"truth has shape {truth.shape}; need {params.p} rows and at least {args.steps} columns")
        truth = truth[:, : args.steps]
        columns.update(_horizon_scores(truth, prediction, ""))
        if baseline is not None:
            columns.update(_horizon_scores(truth, baseline, "baseline_"))

    if args.subset:
        V_T = archive.extras.get("V_T", np.zeros((params.d, params.d)))
        covariances = predictive_variance(params, V_T, args.steps, args.subset)
        lower, upper = confidence_band(prediction[args.subset], covariances, args.z)
        columns["variance_trace"] = [float(np.trace(cov)) for cov in covariances]
        columns["band_halfwidth"] = list(upper[0] - prediction[args.subset][0])
        columns["subset_mean"] = list(prediction[args.subset].mean(axis=0))
        columns["subset_lower"] = list(lower.mean(axis=0))
        columns["subset_upper"] = list(upper.mean(axis=0))

    if len(columns) > 1:
        table = pd.DataFrame(columns)
        if args.scores:
            save_table(args.scores, table, provenance)
        print(tabulate(table, headers="keys", showindex=False, floatfmt=".6g"))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_sweep_config(args.config)
    Y = _load_observations(cfg.data)
    hp = Hyperparams(
        d=cfg.d,
        max_em_iters=cfg.max_em_iters,
        max_inner_iters=cfg.max_inner_iters,
        em_tol=cfg.em_tol,
        c_penalty=cfg.c_penalty,
    )
    result = lambda_sweep(Y, hp, cfg.grid, cfg.train_fraction, cfg.horizon, cfg.workers, args.progress)
    table = pd.DataFrame(result.scores)
    save_table(args.out, table, _provenance(args, n_train=result.n_train, horizon=result.horizon))
    print(tabulate(table.drop(columns=["error"]), headers="keys", showindex=False, floatfmt=".6g"))
    if result.best is None:
        print("no penalty pair produced a valid score")
    else:
        best = result.points[result.best]
        print(f"best: lambda_A={best.lambda_A:g} lambda_C={best.lambda_C:g} correlation={best.correlation:.6g}")
    return EXIT_OK


def cmd_select_d(args: argparse.Namespace) -> int:
    s = singular_values(_load_observations(args.data))
    chosen, profile = profile_likelihood_d(s, args.d_max)
    rows = [[q, s[q - 1], value] for q, value in enumerate(profile, start=1)]
    print(tabulate(rows, headers=["q", "singular value", "profile loglik"], floatfmt=".8g"))
    print(f"selected d: {chosen}")
    return EXIT_OK


def _load_param_matrix(path: str, param: str) -> np.ndarray:
    if is_archive(path):
        return getattr(load_archive(path).params, param)
    return load_matrix(path)


def cmd_distance(args: argparse.Namespace) -> int:
    first = _load_param_matrix(args.a, args.param)
    second = _load_param_matrix(args.b, args.param)
    result = subspace_distance(first, second)
    print(f"distance: {result.distance:.10g}")
    print(f"matched correlation: {result.total_correlation:.10g}")
    print(f"permutation: {' '.join(str(int(j)) for j in result.permutation)}")
    if args.amari:
        print(f"amari error: {amari_error(first, second):.10g}")
    return EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    try:
        cfg = SimConfig(p=args.p, d=args.d, T=args.T, sparsity_level=args.sparsity, seed=args.seed)
        hp = Hyperparams(d=args.d, max_em_iters=args.max_iters, max_inner_iters=args.max_inner_iters)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc

    if args.kind == "estimation":
        grid = proportional_grid(args.lo, args.hi, args.num, args.k)
        seeds = [args.seed + i for i in range(args.seeds)]
        table = estimation_grid_study(
            cfg, seeds, grid, hp, args.train_fraction, args.horizon, args.workers, args.progress
        )
        summary = summarize_estimation(table)
    else:
        hp = replace(hp, lambda_A=args.lambda_a, lambda_C=args.lambda_c)
        table = reproducibility_study(cfg, hp, args.repetitions, args.seed)
        summary = table
        print(f"clustered in {int(table['clustered'].sum())} of {len(table)} repetitions")
    save_table(args.out, table, _provenance(args, seed=args.seed))
    print(tabulate(summary, headers="keys", showindex=False, floatfmt=".6g"))
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="sysid", description="Penalized EM identification of reduced-rank linear dynamical systems")
    parser.add_argument("--log-level", default=None, help="Overrides LDS_LOG_LEVEL")
    parser.add_argument("--log-file", default=None, help="Optional log file (overrides LDS_LOG_FILE)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    sim = sub.add_parser("simulate", help="Generate true parameters and a synthetic series")
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--d", type=int, required=True)
    sim.add_argument("--T", type=int, required=True)
    sim.add_argument("--sparsity", type=float, default=0.2)
    sim.add_argument("--diag-boost", type=float, default=1.0)
    sim.add_argument("--r-scale", type=float, default=1.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--format", choices=["ldsm", "csv"], default="ldsm")
    sim.add_argument("--out", required=True, help="Output directory")
    sim.set_defaults(handler=cmd_simulate)

    fit_cmd = sub.add_parser("fit", help="Run penalized EM on a p x T data matrix")
    fit_cmd.add_argument("--data", required=True)
    fit_cmd.add_argument("--d", type=int, required=True)
    fit_cmd.add_argument("--lambda-a", type=float, default=0.0)
    fit_cmd.add_argument("--lambda-c", type=float, default=0.0)
    fit_cmd.add_argument("--max-iters", type=int, default=30)
    fit_cmd.add_argument("--max-inner-iters", type=int, default=30)
    fit_cmd.add_argument("--tol", type=float, default=1e-6)
    fit_cmd.add_argument("--c-penalty", choices=["whitened", "frobenius"], default="whitened")
    fit_cmd.add_argument("--r-uses-old-c", action="store_true", help="Update R from the previous C before C")
    fit_cmd.add_argument("--out", required=True, help="Model archive path")
    fit_cmd.add_argument("--report", default="", help="Optional text report path")
    fit_cmd.set_defaults(handler=cmd_fit)

    pred = sub.add_parser("predict", help="k-step forecasts from a model archive")
    pred.add_argument("--model", required=True)
    pred.add_argument("--steps", type=int, required=True)
    pred.add_argument("--truth", default="")
    pred.add_argument("--baseline", choices=["svd"], default=None)
    pred.add_argument("--subset", type=int, nargs="+", default=None, help="Row indices for predictive variance")
    pred.add_argument("--z", type=float, default=0.84)
    pred.add_argument("--out", required=True, help="Prediction matrix path (.csv or .ldsm)")
    pred.add_argument("--scores", default="", help="Per-horizon scores CSV")
    pred.set_defaults(handler=cmd_predict)

    sweep = sub.add_parser("sweep", help="Penalty grid search from a YAML config")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--progress", action="store_true")
    sweep.set_defaults(handler=cmd_sweep)

    select = sub.add_parser("select-d", help="Latent dimension by profile likelihood")
    select.add_argument("--data", required=True)
    select.add_argument("--d-max", type=int, default=None)
    select.set_defaults(handler=cmd_select_d)

    dist = sub.add_parser("distance", help="Permutation-invariant distance between two matrices or archives")
    dist.add_argument("--a", required=True)
    dist.add_argument("--b", required=True)
    dist.add_argument("--param", choices=["A", "C"], default="A")
    dist.add_argument("--amari", action="store_true")
    dist.set_defaults(handler=cmd_distance)

    study = sub.add_parser("study", help="Simulation studies over seeds")
    study.add_argument("kind", choices=["estimation", "reproducibility"])
    study.add_argument("--p", type=int, default=300)
    study.add_argument("--d", type=int, default=10)
    study.add_argument("--T", type=int, default=100)
    study.add_argument("--sparsity", type=float, default=0.2)
    study.add_argument("--seed", type=int, default=0)
    study.add_argument("--seeds", type=int, default=5)
    study.add_argument("--lo", type=float, default=-6.0)
    study.add_argument("--hi", type=float, default=4.0)
    study.add_argument("--num", type=int, default=11)
    study.add_argument("--k", type=float, default=1.0)
    study.add_argument("--lambda-a", type=float, default=1e-5)
    study.add_argument("--lambda-c", type=float, default=1e-5)
    study.add_argument("--train-fraction", type=float, default=0.8)
    study.add_argument("--horizon", type=int, default=10)
    study.add_argument("--max-iters", type=int, default=30)
    study.add_argument("--max-inner-iters", type=int, default=30)
    study.add_argument("--repetitions", type=int, default=10)
    study.add_argument("--workers", type=int, default=None)
    study.add_argument("--progress", action="store_true")
    study.add_argument("--out", required=True)
    study.set_defaults(handler=cmd_study)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(load_logging_settings(args.log_level, args.log_file))
        if getattr(args, "workers", 0) is None:
            args.workers = default_workers()
        started = time.perf_counter()
        code = args.handler(args)
        logging.debug("%s finished in %.2f s", args.command, time.perf_counter() - started)
        return code
    except (UsageError, ConfigError) as exc:
        logging.error("%s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        logging.error("Numerical failure: %s", exc)
        if exc.state:
            logging.error("Diagnostics: %s", {k: v for k, v in exc.state.items() if not isinstance(v, np.ndarray)})
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        logging.error("Data error: %s", exc)
        return EXIT_DATA
    except LdsError as exc:
        logging.error("%s", exc)
        return EXIT_DATA
