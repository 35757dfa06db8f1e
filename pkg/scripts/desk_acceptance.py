#!/usr/bin/env python3
"""
Desk-scale acceptance runner.

Evaluates all eight configurations (DP/zCDP x obj/output x logistic/huber)
on one synthetic dataset and checks coverage and the CI >= VI ordering.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict
import logging
import sys

from dperm.artifacts import write_json
from dperm.config import configure_logging
from dperm.core import BudgetSplit
from dperm.erm import TrainConfig
from dperm.evaluation import EvalConfig, EvalReport, check_ordering, coverage_percentage, zcdp_counterpart
from dperm.losses import LossModel
from dperm.synthetic import SynthModel, SynthSpec, default_theta_star, generate
from dperm.workflows.private_intervals import TrainingMechanism

logger = logging.getLogger(__name__)

COVERAGE_RANGE = (0.91, 1.0)
ORDERING_SLACK = 0.9
DP_SPLIT = BudgetSplit.of("dp", 0.5, 0.25, 0.25)


def configurations() -> list[tuple[str, BudgetSplit, TrainingMechanism, LossModel]]:
    out = []
    for split in (DP_SPLIT, zcdp_counterpart(DP_SPLIT)):
        for mechanism in TrainingMechanism:
            for loss in (LossModel.logistic(), LossModel.huber(1.0)):
                label = f"{split.kind.value}/{mechanism.value}/{loss.name.value}"
                out.append((label, split, mechanism, loss))
    return out


def run_all(n: int, d: int, k: int, m_vi: int, m: int, seed: int, workers: int) -> dict[str, EvalReport]:
    data = generate(SynthSpec(n=n, d=d, theta_star=default_theta_star(d), model=SynthModel.LOGISTIC, seed=seed))
    reports = {}
    for label, split, mechanism, loss in configurations():
        logger.info("Configuration %s: n=%d d=%d k=%d seed=%d", label, n, d, k, seed)
        cfg = EvalConfig(
            k=k,
            m_vi=m_vi,
            seed=seed,
            budget_split=split,
            mechanism=mechanism,
            loss=loss,
            train=TrainConfig(c=0.001),
            m=m,
            workers=workers,
        )
        reports[label] = coverage_percentage(data, cfg)
        r = reports[label]
        print(f"{label:<22} coverage {r.coverage:.4f}  CI {r.mean_ci_length:.4g}  VI {r.mean_vi_length:.4g}")
    return reports


def failed_checks(reports: dict[str, EvalReport]) -> list[str]:
    problems = []
    lo, hi = COVERAGE_RANGE
    for label, report in reports.items():
        if not lo <= report.coverage <= hi:
            problems.append(f"{label}: coverage {report.coverage:.4f} outside [{lo}, {hi}]")
        short = check_ordering(report, ORDERING_SLACK)
        if short:
            problems.append(f"{label}: CI shorter than {ORDERING_SLACK} x VI at coordinates {short}")
    return problems


def main() -> int:
    parser = argparse.ArgumentParser(description="Desk-scale coverage acceptance run")
    parser.add_argument("--n", type=int, default=5000, help="Records (default: 5000)")
    parser.add_argument("--d", type=int, default=5, help="Features (default: 5)")
    parser.add_argument("-k", "--k", type=int, default=200, help="Coverage replicates (default: 200)")
    parser.add_argument("--mvi", type=int, default=1000, help="Variability replicates (default: 1000)")
    parser.add_argument("--m", type=int, default=2000, help="Monte-Carlo samples (default: 2000)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", help="Write all reports as JSON")
    args = parser.parse_args()

    configure_logging()
    reports = run_all(args.n, args.d, args.k, args.mvi, args.m, args.seed, args.workers)
    if args.out:
        write_json(args.out, {label: asdict(r) for label, r in reports.items()})

    problems = failed_checks(reports)
    for problem in problems:
        print(f"FAIL {problem}")
    if not problems:
        print(f"All {len(reports)} configurations passed")
    return 1 if problems else 0


if __name__ == "__main__":
    sys.exit(main())
