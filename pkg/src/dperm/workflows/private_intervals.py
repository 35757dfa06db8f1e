"""
Private confidence interval pipeline.

Three steps, each on its own child stream of the caller's RngStream:
1. train θ̃ privately with budget φ₁ (stream 0)
2. release H̃ and Σ̃ at θ̃ with budgets φ₂, φ₃ (stream 1)
3. build the per-coordinate interval from the released pieces (stream 2)

The whole pipeline costs φ₁ + φ₂ + φ₃ in the split's privacy kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
import logging

from dperm.core import (
    ApproxDP,
    BudgetSplit,
    ConversionTarget,
    Dataset,
    IntervalMethod,
    IntervalSet,
    Mechanism,
    PrivacyBudget,
    PrivacyKind,
    PrivateFit,
    convert_budget,
    epsilon_for_rho,
)
from dperm.erm import TrainConfig, train_objective_perturbation, train_output_perturbation
from dperm.intervals import AsymptoticPieces, CISpec, ci_objective, ci_output, estimate_pieces
from dperm.losses import LossModel
from dperm.mechanisms import RngStream

logger = logging.getLogger(__name__)

TRAIN_STREAM = 0
ESTIMATE_STREAM = 1
INTERVAL_STREAM = 2


class TrainingMechanism(str, Enum):
    """User-facing mechanism choice; the privacy kind picks the output variant."""

    OBJECTIVE = "obj"
    OUTPUT = "output"


def train_private(
    d: Dataset,
    loss: LossModel,
    train: TrainConfig,
    phi1: PrivacyBudget,
    mechanism: TrainingMechanism | str,
    rng: RngStream,
) -> PrivateFit:
    """
    Train with budget φ₁.

    Objective perturbation under a zCDP budget ρ runs at ε = √(2ρ), whose
    zCDP image is exactly ρ.
    """
    mechanism = TrainingMechanism(mechanism)
    if mechanism is TrainingMechanism.OBJECTIVE:
        eps = phi1 if phi1.kind is PrivacyKind.PURE_DP else epsilon_for_rho(phi1)
        return train_objective_perturbation(d, loss, train, eps, rng)
    return train_output_perturbation(d, loss, train, phi1, rng)


def default_method(mechanism: Mechanism) -> IntervalMethod:
    if mechanism is Mechanism.OUTPUT_ZCDP:
        return IntervalMethod.CLOSED_FORM_ZCDP
    return IntervalMethod.MONTE_CARLO


def private_confidence_intervals(
    fit: PrivateFit, pieces: AsymptoticPieces, spec: CISpec, rng: RngStream
) -> IntervalSet:
    """Dispatch to the interval construction matching the fit's mechanism."""
    if fit.mechanism is Mechanism.OBJECTIVE:
        return ci_objective(fit, pieces, spec, rng)
    return ci_output(fit, pieces, spec, rng)


@dataclass(frozen=True)
class PipelineResult:
    fit: PrivateFit
    pieces: AsymptoticPieces
    intervals: IntervalSet


@dataclass(frozen=True)
class PrivateIntervalWorkflow:
    """
    Train → estimate → interval, with one budget split.

    Args:
        loss: loss model
        train: regularization and solver settings
        split: budgets φ₁ (training), φ₂ (Hessian), φ₃ (covariance)
        mechanism: obj or output
        ci: interval settings; `method=None` picks Monte-Carlo for obj and
            output-DP fits and the closed form for output-zCDP fits
    """

    loss: LossModel
    train: TrainConfig
    split: BudgetSplit
    mechanism: TrainingMechanism = TrainingMechanism.OBJECTIVE
    ci: CISpec = field(default_factory=CISpec)
    method: IntervalMethod | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mechanism", TrainingMechanism(self.mechanism))
        if self.method is not None:
            object.__setattr__(self, "method", IntervalMethod(self.method))

    def fit(self, d: Dataset, rng: RngStream) -> PrivateFit:
        """Step 1: private training with φ₁."""
        logger.info("Step 1: training (%s, %s, %s)", self.mechanism.value, self.loss.name.value, self.split.phi1)
        return train_private(d, self.loss, self.train, self.split.phi1, self.mechanism, rng)

    def estimate(self, d: Dataset, fit: PrivateFit, rng: RngStream) -> AsymptoticPieces:
        """Step 2: private Hessian with φ₂ and covariance with φ₃."""
        logger.info("Step 2: releasing Hessian (%s) and covariance (%s)", self.split.phi2, self.split.phi3)
        return estimate_pieces(d, self.loss, fit, self.split.phi2, self.split.phi3, rng)

    def interval_spec(self, fit: PrivateFit) -> CISpec:
        return replace(self.ci, method=self.method or default_method(fit.mechanism))

    def intervals(self, fit: PrivateFit, pieces: AsymptoticPieces, rng: RngStream) -> IntervalSet:
        """Step 3: interval construction; no further privacy cost."""
        spec = self.interval_spec(fit)
        logger.info("Step 3: %s interval at alpha=%g", spec.method.value, spec.alpha)
        return private_confidence_intervals(fit, pieces, spec, rng)

    def run(self, d: Dataset, rng: RngStream) -> PipelineResult:
        fit = self.fit(d, rng.child(TRAIN_STREAM))
        pieces = self.estimate(d, fit, rng.child(ESTIMATE_STREAM))
        result = self.intervals(fit, pieces, rng.child(INTERVAL_STREAM))
        return PipelineResult(fit=fit, pieces=pieces, intervals=result)

    def privacy_cost(self, delta: float | None = None) -> PrivacyBudget | ApproxDP:
        """Total cost φ₁+φ₂+φ₃; with `delta`, reported as (ε, δ)-DP."""
        total = self.split.total()
        if delta is None:
            return total
        return convert_budget(total, ConversionTarget.APPROX_DP, delta)
