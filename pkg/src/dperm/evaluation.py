"""
Bootstrap evaluation of private confidence intervals.

The full dataset's empirical distribution is treated as the population:
θ₀ is the non-private ERM minimizer on it, and every replicate resamples
n records with replacement before running the private pipeline.

Stream layout under one seed, one branch per family:
- coverage replicate i: RngStream(seed, i, parent=(COVERAGE_BRANCH,))
- variability replicate i: RngStream(seed, i, parent=(VI_BRANCH,))
- sweep subsampling: RngStream(seed, parent=(SUBSAMPLE_BRANCH,))
Branch 0 is left to data loading and synthetic generation under the same
seed. Inside a replicate, child 0 resamples and child 1 runs the pipeline.
The layout does not depend on the worker count.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import partial
import logging

import numpy as np
import pandas as pd

from dperm.core import (
    BudgetSplit,
    ConversionTarget,
    Dataset,
    FloatArray,
    IntervalMethod,
    IntervalSet,
    ParamVector,
    PrivacyBudget,
    PrivacyKind,
    convert_budget,
)
from dperm.erm import TrainConfig, solve_erm
from dperm.errors import DataError, EigenFailure, EvaluationAborted, InvalidParameter, NoConvergence
from dperm.intervals import CISpec, coordinate_quantiles
from dperm.losses import LossModel
from dperm.mechanisms import RngStream
from dperm.preprocess import append_constant_and_renormalize, subsample
from dperm.workflows.private_intervals import (
    PrivateIntervalWorkflow,
    TrainingMechanism,
    train_private,
)

logger = logging.getLogger(__name__)

COVERAGE_BRANCH = 1
VI_BRANCH = 2
SUBSAMPLE_BRANCH = 3
RESAMPLE_STREAM = 0
PIPELINE_STREAM = 1

# failures that make a single replicate unusable; anything else aborts at once
REPLICATE_FAILURES = (NoConvergence, EigenFailure)


@dataclass(frozen=True)
class EvalConfig:
    k: int = 200
    m_vi: int = 1000
    alpha: float = 0.05
    seed: int = 0
    budget_split: BudgetSplit = field(default_factory=lambda: BudgetSplit.of("dp", 0.5, 0.25, 0.25))
    mechanism: TrainingMechanism = TrainingMechanism.OBJECTIVE
    loss: LossModel = field(default_factory=LossModel.logistic)
    train: TrainConfig = field(default_factory=TrainConfig)
    m: int = 2000
    workers: int = 1
    method: IntervalMethod | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mechanism", TrainingMechanism(self.mechanism))
        if self.k < 1:
            raise InvalidParameter(f"k must be >= 1, got {self.k}", field="k")
        if self.m_vi < 1:
            raise InvalidParameter(f"m_vi must be >= 1, got {self.m_vi}", field="m_vi")
        if self.workers < 1:
            raise InvalidParameter(f"workers must be >= 1, got {self.workers}", field="workers")
        # validates alpha and m
        self.ci_spec()

    def ci_spec(self) -> CISpec:
        # Monte-Carlo chunks run serially inside a replicate; replicates take the workers
        return CISpec(alpha=self.alpha, m=self.m, method=self.method or IntervalMethod.MONTE_CARLO)

    def workflow(self) -> PrivateIntervalWorkflow:
        return PrivateIntervalWorkflow(
            loss=self.loss,
            train=self.train,
            split=self.budget_split,
            mechanism=self.mechanism,
            ci=self.ci_spec(),
            method=self.method,
        )


@dataclass(frozen=True)
class CoordinateStats:
    coverage: float
    mean_ci_length: float
    sd_ci_length: float
    vi_length: float


@dataclass(frozen=True)
class EvalReport:
    coverage: float
    mean_ci_length: float
    sd_ci_length: float
    mean_vi_length: float
    per_coordinate: list[CoordinateStats]
    replicates: int = 0
    failures: int = 0

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class SweepPoint:
    x: float
    ci_mean: float
    ci_sd: float
    vi_mean: float
    coverage: float


class SweepParameter(str, Enum):
    N = "n"
    D = "d"
    PHI1 = "phi1"
    PHI2 = "phi2"
    PHI3 = "phi3"
    C = "c"


# ============== REPLICATES ==============


def bootstrap_replicate(d: Dataset, rng: RngStream) -> Dataset:
    """n records drawn uniformly with replacement."""
    if d.n < 1:
        raise DataError("cannot resample an empty dataset")
    return d.take(rng.generator().integers(0, d.n, size=d.n))


@dataclass(frozen=True)
class _Outcome:
    index: int
    values: FloatArray | None = None
    covered: np.ndarray | None = None
    error: str | None = None


def _coverage_replicate(d: Dataset, cfg: EvalConfig, theta0: ParamVector, index: int) -> _Outcome:
    stream = RngStream(cfg.seed, index, parent=(COVERAGE_BRANCH,))
    sample = bootstrap_replicate(d, stream.child(RESAMPLE_STREAM))
    try:
        result = cfg.workflow().run(sample, stream.child(PIPELINE_STREAM))
    except REPLICATE_FAILURES as e:
        logger.warning("Coverage replicate %d failed: %s", index, e)
        return _Outcome(index, error=str(e))
    ci = result.intervals
    return _Outcome(index, values=ci.lengths, covered=ci.contains(theta0))


def _vi_replicate(d: Dataset, cfg: EvalConfig, index: int) -> _Outcome:
    stream = RngStream(cfg.seed, index, parent=(VI_BRANCH,))
    sample = bootstrap_replicate(d, stream.child(RESAMPLE_STREAM))
    try:
        fit = train_private(
            sample, cfg.loss, cfg.train, cfg.budget_split.phi1, cfg.mechanism, stream.child(PIPELINE_STREAM)
        )
    except REPLICATE_FAILURES as e:
        logger.warning("Variability replicate %d failed: %s", index, e)
        return _Outcome(index, error=str(e))
    return _Outcome(index, values=np.asarray(fit.theta_tilde))


def _run_replicates(job: Callable[[int], _Outcome], count: int, workers: int) -> list[_Outcome]:
    """Outcomes in replicate order, serial when workers == 1."""
    if workers == 1:
        return [job(i) for i in range(count)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(count), chunksize=max(1, count // (4 * workers))))


def _failures(outcomes: Sequence[_Outcome]) -> list[tuple[int, str]]:
    return [(o.index, o.error) for o in outcomes if o.error is not None]


# ============== MEASURES ==============


def variability_intervals(d: Dataset, cfg: EvalConfig) -> IntervalSet:
    """
    Empirical (α/2, 1-α/2) quantiles of θ̃ over m_vi bootstrap replicates,
    each trained with φ₁ only.

    Raises:
        EvaluationAborted: some replicate failed to train (no partial VI)
    """
    logger.info("Variability intervals: %d replicates", cfg.m_vi)
    outcomes = _run_replicates(partial(_vi_replicate, d, cfg), cfg.m_vi, cfg.workers)
    failures = _failures(outcomes)
    if failures:
        raise EvaluationAborted(None, failures)
    thetas = np.vstack([o.values for o in outcomes if o.values is not None])
    lo, hi = coordinate_quantiles(thetas, cfg.alpha)
    return IntervalSet(
        lo=lo,
        hi=hi,
        alpha=cfg.alpha,
        method=IntervalMethod.BOOTSTRAP,
        metadata={"m_vi": cfg.m_vi, "seed": cfg.seed},
    )


def summarize(
    lengths: FloatArray, covered: np.ndarray, vi_lengths: FloatArray, failures: int = 0
) -> EvalReport:
    """
    Aggregate (replicates, d') length and coverage tables into a report.

    Standard deviations are population SDs so a single replicate gives 0.
    """
    per_coordinate = [
        CoordinateStats(
            coverage=float(covered[:, j].mean()),
            mean_ci_length=float(lengths[:, j].mean()),
            sd_ci_length=float(lengths[:, j].std()),
            vi_length=float(vi_lengths[j]),
        )
        for j in range(lengths.shape[1])
    ]
    return EvalReport(
        coverage=float(covered.mean()),
        mean_ci_length=float(lengths.mean()),
        sd_ci_length=float(lengths.std()),
        mean_vi_length=float(np.mean(vi_lengths)),
        per_coordinate=per_coordinate,
        replicates=int(lengths.shape[0]),
        failures=failures,
    )


def coverage_percentage(d: Dataset, cfg: EvalConfig, vi: IntervalSet | None = None) -> EvalReport:
    """
    Fraction of (replicate, coordinate) intervals that contain θ₀.

    Args:
        d: dataset whose empirical distribution stands in for the population
        cfg: evaluation settings
        vi: precomputed variability intervals; computed from `cfg` if omitted

    Raises:
        EvaluationAborted: some replicate failed; carries the report over the
            successful replicates
    """
    theta0 = solve_erm(d, cfg.loss, cfg.train)
    logger.info("Coverage: %d replicates, d'=%d, %s", cfg.k, d.dim, cfg.budget_split.total())
    if vi is None:
        vi = variability_intervals(d, cfg)

    outcomes = _run_replicates(partial(_coverage_replicate, d, cfg, theta0), cfg.k, cfg.workers)
    ok = [o for o in outcomes if o.error is None]
    failures = _failures(outcomes)

    report = None
    if ok:
        report = summarize(
            np.vstack([o.values for o in ok if o.values is not None]),
            np.vstack([o.covered for o in ok if o.covered is not None]),
            vi.lengths,
            failures=len(failures),
        )
    if failures:
        raise EvaluationAborted(report, failures)
    assert report is not None
    logger.info(
        "Coverage %.4f, mean CI length %.4g, mean VI length %.4g",
        report.coverage,
        report.mean_ci_length,
        report.mean_vi_length,
    )
    return report


# ============== SWEEPS ==============


def zcdp_counterpart(split: BudgetSplit) -> BudgetSplit:
    """Same split in zCDP terms, ρ = ε²/2 per component, for DP vs zCDP comparisons."""
    if split.kind is PrivacyKind.ZCDP:
        return split
    parts = [convert_budget(b, ConversionTarget.ZCDP) for b in (split.phi1, split.phi2, split.phi3)]
    return BudgetSplit(*(p for p in parts if isinstance(p, PrivacyBudget)))


def _first_features(d: Dataset, cfg: EvalConfig, d1: int) -> Dataset:
    """First d1 features of a dataset whose last column is the constant, constant re-appended."""
    if not 1 <= d1 <= d.dim - 1:
        raise InvalidParameter(f"sweep value d={d1} outside [1, {d.dim - 1}]", field="values")
    rng = RngStream(cfg.seed, parent=(SUBSAMPLE_BRANCH,))
    features, labels = subsample(d.X[:, :-1], d.y, rng, d1=d1)
    return Dataset(append_constant_and_renormalize(features), labels)


def _with_parameter(
    d: Dataset, cfg: EvalConfig, parameter: SweepParameter, value: float
) -> tuple[Dataset, EvalConfig]:
    split = cfg.budget_split
    if parameter is SweepParameter.N:
        n = int(value)
        if not 1 <= n <= d.n:
            raise InvalidParameter(f"sweep value n={n} outside [1, {d.n}]", field="values")
        order = RngStream(cfg.seed, parent=(SUBSAMPLE_BRANCH,)).generator().permutation(d.n)
        return d.take(order[:n]), cfg
    if parameter is SweepParameter.D:
        return _first_features(d, cfg, int(value)), cfg
    if parameter is SweepParameter.C:
        return d, replace(cfg, train=replace(cfg.train, c=value))
    budget = PrivacyBudget(split.kind, value)
    updated = replace(split, **{parameter.value: budget})
    return d, replace(cfg, budget_split=updated)


def sweep(
    d: Dataset, cfg: EvalConfig, parameter: SweepParameter | str, values: Sequence[float]
) -> list[SweepPoint]:
    """
    Evaluate at each value of one parameter, all else fixed.

    A `d` sweep reports the first coordinate's CI and VI lengths, since the
    coordinate set itself changes between points.
    """
    parameter = SweepParameter(parameter)
    if not values:
        raise InvalidParameter("sweep needs at least one value", field="values")
    points = []
    for value in values:
        data, point_cfg = _with_parameter(d, cfg, parameter, value)
        logger.info("Sweep %s=%g", parameter.value, value)
        report = coverage_percentage(data, point_cfg)
        if parameter is SweepParameter.D:
            first = report.per_coordinate[0]
            ci_mean, ci_sd, vi_mean = first.mean_ci_length, first.sd_ci_length, first.vi_length
        else:
            ci_mean, ci_sd, vi_mean = report.mean_ci_length, report.sd_ci_length, report.mean_vi_length
        points.append(
            SweepPoint(x=float(value), ci_mean=ci_mean, ci_sd=ci_sd, vi_mean=vi_mean, coverage=report.coverage)
        )
    return points


def sweep_frame(points: Sequence[SweepPoint]) -> pd.DataFrame:
    return pd.DataFrame([asdict(p) for p in points], columns=["x", "ci_mean", "ci_sd", "vi_mean", "coverage"])


def check_ordering(report: EvalReport, slack: float = 0.9) -> list[int]:
    """Coordinates whose mean CI length falls below `slack` times the VI length."""
    return [
        j
        for j, stats in enumerate(report.per_coordinate)
        if stats.mean_ci_length < slack * stats.vi_length
    ]
