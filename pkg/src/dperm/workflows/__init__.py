"""End-to-end pipelines built from the dperm primitives."""

from dperm.workflows.private_intervals import (
    PipelineResult,
    PrivateIntervalWorkflow,
    TrainingMechanism,
    private_confidence_intervals,
    train_private,
)

__all__ = [
    "PipelineResult",
    "PrivateIntervalWorkflow",
    "TrainingMechanism",
    "private_confidence_intervals",
    "train_private",
]
