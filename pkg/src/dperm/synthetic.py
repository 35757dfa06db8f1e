"""
Synthetic labeled data with features in the unit ball.

Features are uniform on the d-dimensional unit ball, then get the constant
column appended and are renormalized, so θ* has length d + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from dperm.core import Dataset, FloatArray, ParamVector, check_finite, validate_dataset
from dperm.errors import DimensionMismatch, InvalidParameter
from dperm.mechanisms import RngStream
from dperm.preprocess import append_constant_and_renormalize

logger = logging.getLogger(__name__)

LABEL_FLIP_RATE = 0.05
DEFAULT_SIGNAL_NORM = 2.0


class SynthModel(str, Enum):
    LOGISTIC = "logistic"
    MARGIN = "margin"


@dataclass(frozen=True, eq=False)
class SynthSpec:
    n: int
    d: int
    theta_star: ParamVector
    model: SynthModel = SynthModel.LOGISTIC
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", SynthModel(self.model))
        if self.n < 1:
            raise InvalidParameter(f"n must be >= 1, got {self.n}", field="n")
        if self.d < 1:
            raise InvalidParameter(f"d must be >= 1, got {self.d}", field="d")
        theta = check_finite(self.theta_star, "theta_star")
        if theta.shape != (self.d + 1,):
            raise DimensionMismatch(
                f"theta_star needs d + 1 = {self.d + 1} entries (constant included), got {theta.shape[0]}"
            )
        if not np.linalg.norm(theta) > 0:
            raise InvalidParameter("theta_star must be nonzero", field="theta_star")
        object.__setattr__(self, "theta_star", theta)


def default_theta_star(d: int, norm: float = DEFAULT_SIGNAL_NORM) -> ParamVector:
    """Equal weight on every feature, zero intercept, L2 norm `norm`."""
    return np.concatenate([np.full(d, norm / math.sqrt(d)), [0.0]])


def uniform_ball(n: int, d: int, gen: np.random.Generator) -> FloatArray:
    direction = gen.standard_normal((n, d))
    norms = np.linalg.norm(direction, axis=1)
    norms[norms == 0.0] = 1.0
    radius = gen.uniform(size=n) ** (1.0 / d)
    return direction / norms[:, None] * radius[:, None]


def draw_labels(
    model: SynthModel, scores: FloatArray, gen: np.random.Generator
) -> npt.NDArray[np.int64]:
    """Logistic: P(y=+1) = S(score). Margin: sign(score), ties to +1, 5% flipped."""
    u = gen.uniform(size=scores.shape[0])
    if model is SynthModel.LOGISTIC:
        return np.where(u < expit(scores), 1, -1).astype(np.int64)
    labels = np.where(scores >= 0.0, 1, -1)
    return np.where(u < LABEL_FLIP_RATE, -labels, labels).astype(np.int64)


def generate(spec: SynthSpec) -> Dataset:
    """Deterministic given spec.seed; features on child stream 0, labels on 1."""
    root = RngStream(spec.seed)
    X = append_constant_and_renormalize(uniform_ball(spec.n, spec.d, root.child(0).generator()))
    y = draw_labels(spec.model, X @ spec.theta_star, root.child(1).generator())
    logger.info(
        "Generated %s dataset: n=%d d=%d, %.1f%% positive",
        spec.model.value,
        spec.n,
        spec.d,
        100.0 * float(np.mean(y == 1)),
    )
    return validate_dataset(Dataset(X, y))
