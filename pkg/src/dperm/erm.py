"""
Regularized ERM and the two private training algorithms.

The objective is J(θ) = (1/n) Σ [f(y_i θᵀx_i) + c‖θ‖²] + (1/n) βᵀθ, which is
2c-strongly convex, so a damped Newton method finds its unique minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import numpy.typing as npt
from scipy import linalg

from dperm import mechanisms
from dperm.core import (
    Dataset,
    FloatArray,
    Mechanism,
    ParamVector,
    PrivacyBudget,
    PrivacyKind,
    PrivateFit,
)
from dperm.errors import BudgetTooSmall, DimensionMismatch, InvalidParameter, NoConvergence
from dperm.losses import LossModel, margins, mean_hessian, record_gradients
from dperm.mechanisms import RngStream

logger = logging.getLogger(__name__)

MAX_HALVINGS = 60
ARMIJO = 1e-4


class Solver(str, Enum):
    NEWTON = "newton"
    GRADIENT_DESCENT = "gd"


@dataclass(frozen=True)
class TrainConfig:
    c: float = 0.001
    tol: float = 1e-8
    max_iter: int = 200
    solver: Solver = Solver.NEWTON

    def __post_init__(self) -> None:
        object.__setattr__(self, "solver", Solver(self.solver))
        if not self.c > 0:
            raise InvalidParameter(f"c must be positive, got {self.c}", field="c")
        if not self.tol > 0:
            raise InvalidParameter(f"tol must be positive, got {self.tol}", field="tol")
        if self.max_iter < 1:
            raise InvalidParameter(f"max_iter must be >= 1, got {self.max_iter}", field="max_iter")


def _beta_or_zero(beta: npt.ArrayLike | None, dim: int) -> FloatArray:
    if beta is None:
        return np.zeros(dim)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (dim,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({dim},)")
    return beta


def objective_value(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    theta: ParamVector,
    beta: npt.ArrayLike | None = None,
) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    b = _beta_or_zero(beta, theta.shape[0])
    z = margins(d.X, d.y, theta)
    return float(np.mean(m.value(z)) + cfg.c * (theta @ theta) + (b @ theta) / d.n)


def objective_gradient(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    theta: ParamVector,
    beta: npt.ArrayLike | None = None,
) -> FloatArray:
    theta = np.asarray(theta, dtype=np.float64)
    b = _beta_or_zero(beta, theta.shape[0])
    return record_gradients(m, d.X, d.y, theta).mean(axis=0) + 2.0 * cfg.c * theta + b / d.n


def objective_hessian(d: Dataset, m: LossModel, cfg: TrainConfig, theta: ParamVector) -> FloatArray:
    """H[J_n(θ)]; β enters linearly and drops out."""
    H = mean_hessian(m, d.X, d.y, np.asarray(theta, dtype=np.float64))
    return H + 2.0 * cfg.c * np.eye(H.shape[0])


def _backtrack(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    b: FloatArray,
    theta: ParamVector,
    value: float,
    grad: FloatArray,
    step: FloatArray,
) -> tuple[ParamVector, float] | None:
    """Armijo halving along `step`; None if no halving decreases the objective."""
    slope = float(grad @ step)
    # rounding noise of the objective
    slack = 8.0 * np.finfo(float).eps * max(1.0, abs(value))
    scale = 1.0
    for _ in range(MAX_HALVINGS):
        candidate = theta + scale * step
        cand_value = objective_value(d, m, cfg, candidate, b)
        if cand_value <= value + ARMIJO * scale * slope + slack:
            return candidate, cand_value
        scale /= 2.0
    return None


def solve_erm(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    beta: npt.ArrayLike | None = None,
) -> ParamVector:
    """
    Minimize the (optionally perturbed) regularized empirical risk.

    Damped Newton: the step is halved until the objective decreases. If the
    Newton system cannot be solved, or no halving of the Newton step is
    accepted, the iteration tries a gradient step instead. With `solver=gd`
    every iteration is a gradient step. When no direction decreases the
    objective the iterate is left where it is and the solver stops.

    Raises:
        NoConvergence: gradient norm still above `tol` after `max_iter` steps
            or when the line search stalls
    """
    dim = d.dim
    b = _beta_or_zero(beta, dim)
    theta = np.zeros(dim)
    value = objective_value(d, m, cfg, theta, b)
    # curvature bound of J on the unit ball: t + 2c
    gd_rate = 1.0 / (m.t + 2.0 * cfg.c)

    grad_norm = math.inf
    for it in range(cfg.max_iter):
        grad = objective_gradient(d, m, cfg, theta, b)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.tol:
            logger.debug("solve_erm converged in %d iterations (|g|=%.3e)", it, grad_norm)
            return theta

        steps = [-gd_rate * grad]
        if cfg.solver is Solver.NEWTON:
            try:
                steps.insert(0, -linalg.solve(objective_hessian(d, m, cfg, theta), grad, assume_a="pos"))
            except (linalg.LinAlgError, ValueError):
                logger.debug("Newton system failed at iteration %d, taking a gradient step", it)

        accepted = None
        for step in steps:
            accepted = _backtrack(d, m, cfg, b, theta, value, grad, step)
            if accepted is not None:
                break
        if accepted is None:
            logger.debug("line search stalled at iteration %d (|g|=%.3e)", it, grad_norm)
            break
        theta, value = accepted

    grad_norm = float(np.linalg.norm(objective_gradient(d, m, cfg, theta, b)))
    if grad_norm <= cfg.tol:
        return theta
    raise NoConvergence(cfg.max_iter, grad_norm)


# ============== PRIVATE TRAINING ==============


def min_regularization(m: LossModel, n: int, eps: float) -> float:
    """Smallest c objective perturbation accepts: t / (2n(e^ε - 1))."""
    return m.t / (2.0 * n * math.expm1(eps))


def effective_epsilon(m: LossModel, n: int, c: float, eps: float) -> float:
    """ε' = ε - ln(1 + t/(2nc))."""
    return eps - math.log1p(m.t / (2.0 * n * c))


def train_objective_perturbation(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    eps: PrivacyBudget,
    rng: RngStream,
) -> PrivateFit:
    """
    Objective perturbation under ε-DP (and hence ε²/2-zCDP).

    Raises:
        BudgetTooSmall: c < t/(2n(e^ε - 1)), or ε' is not positive
        NoConvergence: propagated from the solver
    """
    if eps.kind is not PrivacyKind.PURE_DP:
        raise InvalidParameter("objective perturbation takes a pure-DP budget", field="phi1")
    threshold = min_regularization(m, d.n, eps.value)
    if cfg.c < threshold:
        raise BudgetTooSmall(
            f"objective perturbation needs c >= {threshold:.6g} at eps={eps.value:g}, n={d.n}; got c={cfg.c:g}"
        )
    eps_prime = effective_epsilon(m, d.n, cfg.c, eps.value)
    if not eps_prime > 0:
        raise BudgetTooSmall(f"effective epsilon {eps_prime:.3g} is not positive")

    gamma = eps_prime / 2.0
    logger.debug("objective perturbation: eps'=%.6g gamma=%.6g", eps_prime, gamma)
    beta = mechanisms.sample_spherical_laplace(d.dim, gamma, rng)
    theta = solve_erm(d, m, cfg, beta)
    return PrivateFit(
        theta_tilde=theta,
        mechanism=Mechanism.OBJECTIVE,
        n=d.n,
        c=cfg.c,
        gamma=gamma,
        eps_prime=eps_prime,
    )


def train_output_perturbation(
    d: Dataset,
    m: LossModel,
    cfg: TrainConfig,
    phi: PrivacyBudget,
    rng: RngStream,
) -> PrivateFit:
    """
    Output perturbation: θ̂ plus noise calibrated to sensitivity 1/(nc).

    Pure DP draws spherical Laplace noise with γ = ncφ; zCDP draws
    N(0, I/(2φ(nc)²)).
    """
    theta_hat = solve_erm(d, m, cfg)
    nc = d.n * cfg.c
    if phi.kind is PrivacyKind.PURE_DP:
        gamma = nc * phi.value
        noise = mechanisms.sample_spherical_laplace(d.dim, gamma, rng)
        return PrivateFit(
            theta_tilde=theta_hat + noise,
            mechanism=Mechanism.OUTPUT_DP,
            n=d.n,
            c=cfg.c,
            gamma=gamma,
        )

    sigma2 = mechanisms.gaussian_variance(1.0 / nc, phi.value)
    noise = mechanisms.sample_gaussian_iso(d.dim, sigma2, rng)
    return PrivateFit(
        theta_tilde=theta_hat + noise,
        mechanism=Mechanism.OUTPUT_ZCDP,
        n=d.n,
        c=cfg.c,
        sigma2=sigma2,
    )
