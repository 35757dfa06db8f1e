"""
Loss functions f(z) with z = y·θᵀx, their derivatives, and the sensitivity
constants used to calibrate the private Hessian and covariance releases.

Supported losses:
- logistic: f(z) = ln(1 + e^{-z}), |f''| <= 1/4
- huber: Huberized hinge with half-width h, |f''| <= 1/(2h)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from dperm.core import FloatArray, ParamVector
from dperm.errors import DimensionMismatch, InvalidParameter

DEFAULT_HUBER_H = 1.0


class LossName(str, Enum):
    LOGISTIC = "logistic"
    HUBER_SVM = "huber"


@dataclass(frozen=True)
class LossModel:
    """A margin loss plus its second-derivative bound t."""

    name: LossName
    h: float = DEFAULT_HUBER_H

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", LossName(self.name))
        if self.name is LossName.HUBER_SVM and not (math.isfinite(self.h) and self.h > 0):
            raise InvalidParameter(f"Huber half-width must be positive, got {self.h}", field="h")

    @classmethod
    def logistic(cls) -> LossModel:
        return cls(LossName.LOGISTIC)

    @classmethod
    def huber(cls, h: float = DEFAULT_HUBER_H) -> LossModel:
        return cls(LossName.HUBER_SVM, h)

    @property
    def t(self) -> float:
        if self.name is LossName.LOGISTIC:
            return 0.25
        return 1.0 / (2.0 * self.h)

    def value(self, z: npt.ArrayLike) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        if self.name is LossName.LOGISTIC:
            return np.logaddexp(0.0, -z)
        h = self.h
        return np.where(
            z > 1.0 + h,
            0.0,
            np.where(z < 1.0 - h, 1.0 - z, (1.0 + h - z) ** 2 / (4.0 * h)),
        )

    def derivative(self, z: npt.ArrayLike) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        if self.name is LossName.LOGISTIC:
            return -expit(-z)
        h = self.h
        return np.where(
            z > 1.0 + h,
            0.0,
            np.where(z < 1.0 - h, -1.0, (z - 1.0 - h) / (2.0 * h)),
        )

    def second_derivative(self, z: npt.ArrayLike) -> FloatArray:
        """f''(z); on the Huber kinks |1 - z| = h the band value is returned."""
        z = np.asarray(z, dtype=np.float64)
        if self.name is LossName.LOGISTIC:
            return expit(z) * expit(-z)
        return np.where(np.abs(1.0 - z) <= self.h, 1.0 / (2.0 * self.h), 0.0)


def loss_value(m: LossModel, z: float) -> float:
    return float(m.value(z))


def _check_pair(x: npt.ArrayLike, theta: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.shape != theta.shape or x.ndim != 1:
        raise DimensionMismatch(f"feature shape {x.shape} does not match theta shape {theta.shape}")
    return x, theta


def per_record_gradient(m: LossModel, x: npt.ArrayLike, y: int, theta: ParamVector) -> FloatArray:
    """∇_θ f(y θᵀx) = f'(z)·y·x."""
    x, theta = _check_pair(x, theta)
    z = y * float(theta @ x)
    return float(m.derivative(z)) * y * x


def per_record_hessian(m: LossModel, x: npt.ArrayLike, y: int, theta: ParamVector) -> FloatArray:
    """H_θ f(y θᵀx) = f''(z)·y²·xxᵀ."""
    x, theta = _check_pair(x, theta)
    z = y * float(theta @ x)
    return float(m.second_derivative(z)) * float(y * y) * np.outer(x, x)


# ============== BATCH FORMS ==============


def margins(X: FloatArray, y: npt.NDArray[np.int64], theta: ParamVector) -> FloatArray:
    if X.shape[1] != theta.shape[0]:
        raise DimensionMismatch(f"data has {X.shape[1]} features but theta has {theta.shape[0]}")
    return y * (X @ theta)


def record_gradients(
    m: LossModel, X: FloatArray, y: npt.NDArray[np.int64], theta: ParamVector
) -> FloatArray:
    """(n, d) matrix whose row i is ∇f(y_i θᵀx_i)."""
    z = margins(X, y, theta)
    return (m.derivative(z) * y)[:, None] * X


def mean_hessian(
    m: LossModel, X: FloatArray, y: npt.NDArray[np.int64], theta: ParamVector
) -> FloatArray:
    """(1/n) Σ f''(z_i) x_i x_iᵀ, without the regularizer."""
    z = margins(X, y, theta)
    weights = m.second_derivative(z)
    H = (X * weights[:, None]).T @ X / X.shape[0]
    return (H + H.T) / 2.0


# ============== SENSITIVITIES ==============


def hessian_sensitivity(m: LossModel, n: int) -> float:
    """L2 sensitivity of the empirical Hessian of J_n under one record swap."""
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}", field="n")
    if m.name is LossName.LOGISTIC:
        return 1.0 / (2.0 * n)
    return 1.0 / (n * m.h)


def covariance_sensitivity(m: LossModel, n: int, theta: ParamVector) -> float:
    """
    L2 sensitivity of the score covariance estimate.

    The logistic bound 2·S(‖θ‖₂)²/n is evaluated at the released parameters,
    the only public stand-in for the true ‖θ₀‖₂.
    """
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}", field="n")
    if m.name is LossName.LOGISTIC:
        s = float(expit(np.linalg.norm(theta)))
        return 2.0 * s * s / n
    return 2.0 / n
