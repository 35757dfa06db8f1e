"""
dperm command line.

    dperm train    --input data.csv [--schema schema.toml] --out fit.json
    dperm ci       --input data.csv --fit fit.json --out ci.json
    dperm evaluate [--input data.csv | --n N --d D] --out report.json
    dperm synth    --n N --d D --out data.csv

Every subcommand accepts --config run.toml; flags override the file.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict
import logging
import sys
from typing import Any

import numpy as np

from dperm import preprocess
from dperm.artifacts import (
    fit_document,
    interval_document,
    metadata,
    read_fit,
    report_document,
    report_table,
    write_json,
    write_plot_csv,
)
from dperm.config import Command, RunConfig, configure_logging, load_config, with_seed
from dperm.core import ConversionTarget, Dataset, compose, convert_budget
from dperm.errors import ConfigError, DpermError, EvaluationAborted
from dperm.evaluation import EvalReport, coverage_percentage, sweep
from dperm.mechanisms import RngStream
from dperm.synthetic import SynthSpec, default_theta_star, generate
from dperm.workflows.private_intervals import (
    ESTIMATE_STREAM,
    INTERVAL_STREAM,
    TRAIN_STREAM,
    PrivateIntervalWorkflow,
)

logger = logging.getLogger(__name__)

DATA_STREAM = 3

# flag dest -> RunConfig field, where they differ
FLAG_FIELDS = {
    "input": "input_path",
    "schema": "schema_path",
    "out": "output_path",
    "fit": "fit_path",
    "mvi": "m_vi",
    "plot_out": "plot_path",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of key = value settings")
    common.add_argument("--input", help="CSV dataset (raw with --schema, else processed)")
    common.add_argument("--schema", help="TOML column schema for a raw CSV")
    common.add_argument("--out", help="Output artifact path")
    common.add_argument("--loss", choices=["logistic", "huber"])
    common.add_argument("--h", type=float, help="Huber half-width (default: 1.0)")
    common.add_argument("--c", type=float, help="Regularization coefficient (default: 0.001)")
    common.add_argument("--tol", type=float, help="Solver gradient tolerance (default: 1e-8)")
    common.add_argument("--max-iter", dest="max_iter", type=int, help="Solver iterations (default: 200)")
    common.add_argument("--solver", choices=["newton", "gd"])
    common.add_argument("--mechanism", choices=["obj", "output"])
    common.add_argument("--privacy", choices=["dp", "zcdp"])
    common.add_argument("--phi1", type=float, help="Training budget")
    common.add_argument("--phi2", type=float, help="Hessian budget")
    common.add_argument("--phi3", type=float, help="Covariance budget")
    common.add_argument("--delta", type=float, help="Also report the cost as (eps, delta)-DP")
    common.add_argument("--alpha", type=float, help="Interval level 1 - alpha (default: 0.05)")
    common.add_argument("--m", type=int, help="Monte-Carlo samples (default: 2000)")
    common.add_argument("--method", choices=["monte-carlo", "zcdp-closed"])
    common.add_argument("--seed", type=int, help="Root seed; drawn from system entropy if omitted")
    common.add_argument("--workers", type=int, help="Parallel workers (default: 1)")
    common.add_argument("--n1", type=int, help="Keep the first n1 rows after a seeded shuffle")
    common.add_argument("--d1", type=int, help="Keep the first d1 features")

    synth = argparse.ArgumentParser(add_help=False)
    synth.add_argument("--n", type=int, help="Synthetic record count")
    synth.add_argument("--d", type=int, help="Synthetic feature count (before the constant)")
    synth.add_argument("--model", choices=["logistic", "margin"])
    synth.add_argument("--theta-star", dest="theta_star", type=float, nargs="+", help="d + 1 weights")

    parser = argparse.ArgumentParser(prog="dperm", description="Private ERM and private confidence intervals")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    subparsers.add_parser("train", parents=[common], help="Train a private model")
    ci_parser = subparsers.add_parser("ci", parents=[common], help="Private confidence intervals for a fit")
    ci_parser.add_argument("--fit", help="PrivateFit JSON written by train")

    eval_parser = subparsers.add_parser("evaluate", parents=[common, synth], help="Bootstrap coverage")
    eval_parser.add_argument("--k", type=int, help="Coverage replicates (default: 200)")
    eval_parser.add_argument("--mvi", type=int, help="Variability replicates (default: 1000)")
    eval_parser.add_argument("--sweep", choices=["n", "d", "phi1", "phi2", "phi3", "c"])
    eval_parser.add_argument("--values", type=float, nargs="+", help="Sweep values")
    eval_parser.add_argument("--plot-out", dest="plot_out", help="Plot-data CSV for a sweep")

    subparsers.add_parser("synth", parents=[common, synth], help="Write a synthetic processed CSV")
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    skip = {"command", "config"}
    return {FLAG_FIELDS.get(key, key): value for key, value in vars(args).items() if key not in skip}


def resolve_seed(cfg: RunConfig) -> RunConfig:
    if cfg.seed is not None:
        return cfg
    seed = int(np.random.SeedSequence().entropy % 2**63)
    print(f"seed: {seed}", file=sys.stderr)
    return with_seed(cfg, seed)


# ============== COMMANDS ==============


def _seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("seed was not resolved", field="seed")
    return cfg.seed


def load_input(cfg: RunConfig) -> Dataset:
    root = RngStream(_seed(cfg))
    if cfg.schema_path:
        processed = preprocess.load_dataset(
            cfg.input_path, cfg.schema_path, root.child(DATA_STREAM), cfg.n1, cfg.d1
        )
        return processed.dataset
    if cfg.n1 is not None or cfg.d1 is not None:
        raise ConfigError("--n1/--d1 apply to raw CSVs read with --schema", field="n1")
    return preprocess.read_processed_csv(cfg.input_path)


def synthetic_input(cfg: RunConfig) -> Dataset:
    assert cfg.n is not None and cfg.d is not None
    theta_star = np.asarray(cfg.theta_star) if cfg.theta_star else default_theta_star(cfg.d)
    return generate(SynthSpec(n=cfg.n, d=cfg.d, theta_star=theta_star, model=cfg.model, seed=_seed(cfg)))


def workflow_for(cfg: RunConfig) -> PrivateIntervalWorkflow:
    return PrivateIntervalWorkflow(
        loss=cfg.loss_model(),
        train=cfg.train_config(),
        split=cfg.budget_split(),
        mechanism=cfg.mechanism,
        ci=cfg.ci_spec(),
        method=cfg.method,
    )


def _approx(cfg: RunConfig, cost: Any) -> dict[str, Any]:
    if cfg.delta is None:
        return {}
    approx = convert_budget(cost, ConversionTarget.APPROX_DP, cfg.delta)
    return {"approx_dp": asdict(approx)}


def run_train(cfg: RunConfig) -> None:
    d = load_input(cfg)
    workflow = workflow_for(cfg)
    fit = workflow.fit(d, RngStream(_seed(cfg)).child(TRAIN_STREAM))
    write_json(cfg.output_path, fit_document(fit, cfg, cost=workflow.split.phi1))
    print(f"trained {fit.mechanism.value} fit: n={fit.n} d'={fit.dim} -> {cfg.output_path}")


def run_ci(cfg: RunConfig) -> None:
    d = load_input(cfg)
    fit = read_fit(cfg.fit_path)
    workflow = workflow_for(cfg)
    root = RngStream(_seed(cfg))
    pieces = workflow.estimate(d, fit, root.child(ESTIMATE_STREAM))
    intervals = workflow.intervals(fit, pieces, root.child(INTERVAL_STREAM))
    cost = compose(workflow.split.phi2, workflow.split.phi3)
    doc = interval_document(intervals, cfg, fit_path=cfg.fit_path, privacy_cost=str(cost), **_approx(cfg, cost))
    write_json(cfg.output_path, doc)
    print(f"{intervals.method.value} intervals for d'={fit.dim} at alpha={intervals.alpha:g} -> {cfg.output_path}")


def _write_aborted(cfg: RunConfig, e: EvaluationAborted) -> None:
    if isinstance(e.report, EvalReport):
        doc = report_document(e.report, cfg, failed_replicates=[list(f) for f in e.failures])
        write_json(cfg.output_path, doc)


def run_evaluate(cfg: RunConfig) -> None:
    d = load_input(cfg) if cfg.input_path else synthetic_input(cfg)
    ecfg = cfg.eval_config(_seed(cfg))
    if cfg.sweep is not None:
        points = sweep(d, ecfg, cfg.sweep, cfg.values)
        write_json(
            cfg.output_path,
            {"sweep": cfg.sweep.value, "points": [asdict(p) for p in points], "metadata": metadata(cfg)},
        )
        if cfg.plot_path:
            write_plot_csv(points, cfg.plot_path)
        for p in points:
            print(f"{cfg.sweep.value}={p.x:g}: coverage {p.coverage:.4f}, CI {p.ci_mean:.4g}, VI {p.vi_mean:.4g}")
        return
    try:
        report = coverage_percentage(d, ecfg)
    except EvaluationAborted as e:
        _write_aborted(cfg, e)
        raise
    total = ecfg.budget_split.total()
    write_json(cfg.output_path, report_document(report, cfg, privacy_cost=str(total), **_approx(cfg, total)))
    print(report_table(report))


def run_synth(cfg: RunConfig) -> None:
    d = synthetic_input(cfg)
    preprocess.write_processed_csv(d, cfg.output_path)
    print(f"wrote {d.n} records with d'={d.dim} -> {cfg.output_path}")


COMMANDS = {
    Command.TRAIN: run_train,
    Command.CI: run_ci,
    Command.EVALUATE: run_evaluate,
    Command.SYNTH: run_synth,
}


def run(cfg: RunConfig) -> int:
    COMMANDS[cfg.command](cfg)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    try:
        configure_logging()
        cfg = resolve_seed(load_config(args.command, args.config, overrides_from(args)))
        return run(cfg)
    except DpermError as e:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
