"""
Private confidence intervals for ERM parameters.

Both interval algorithms rest on the same asymptotic expansion: the error
θ₀ - θ̃ is approximately a linear map of a Gaussian score G ~ N(0, Σ)
plus the privacy noise. H and Σ are evaluated at θ̃ and released through
PrivSPDMat; everything after that is post-processing of private quantities.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math

import numpy as np
import numpy.typing as npt
from scipy import stats

from dperm import mechanisms
from dperm.core import (
    Dataset,
    FloatArray,
    IntervalMethod,
    IntervalSet,
    Mechanism,
    ParamVector,
    PrivacyBudget,
    PrivateFit,
    check_finite,
)
from dperm.errors import DimensionMismatch, EmptySamples, InvalidParameter, MechanismMismatch
from dperm.losses import (
    LossModel,
    covariance_sensitivity,
    hessian_sensitivity,
    mean_hessian,
    record_gradients,
)
from dperm.mechanisms import RngStream, SPDMatrix

logger = logging.getLogger(__name__)

MIN_MC_SAMPLES = 100
# guards ceil() against q·m landing a rounding error above an integer
_INDEX_EPS = 1e-9


@dataclass(frozen=True)
class AsymptoticPieces:
    H_tilde: SPDMatrix
    Sigma_tilde: SPDMatrix
    n: int

    def __post_init__(self) -> None:
        if self.H_tilde.dim != self.Sigma_tilde.dim:
            raise DimensionMismatch("private Hessian and covariance differ in dimension")
        if self.n < 1:
            raise InvalidParameter(f"n must be >= 1, got {self.n}", field="n")

    @property
    def dim(self) -> int:
        return self.H_tilde.dim


@dataclass(frozen=True)
class CISpec:
    alpha: float = 0.05
    m: int = 2000
    method: IntervalMethod = IntervalMethod.MONTE_CARLO
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", IntervalMethod(self.method))
        if not 0 < self.alpha < 1:
            raise InvalidParameter(f"alpha must lie in (0, 1), got {self.alpha}", field="alpha")
        if self.method is IntervalMethod.MONTE_CARLO and self.m < MIN_MC_SAMPLES:
            raise InvalidParameter(
                f"Monte-Carlo intervals need m >= {MIN_MC_SAMPLES}, got {self.m}", field="m"
            )
        if self.workers < 1:
            raise InvalidParameter(f"workers must be >= 1, got {self.workers}", field="workers")


# ============== EMPIRICAL MATRICES ==============


def empirical_hessian(d: Dataset, m: LossModel, theta: ParamVector, c: float) -> FloatArray:
    """H[J_n(θ)] = (1/n) Σ H f(y_i θᵀx_i) + 2cI."""
    theta = check_finite(theta)
    H = mean_hessian(m, d.X, d.y, theta)
    return H + 2.0 * c * np.eye(theta.shape[0])


def empirical_covariance(d: Dataset, m: LossModel, theta: ParamVector, c: float) -> FloatArray:
    """Σ ≈ (1/n) Σ ∇f ∇fᵀ - 4c²θθᵀ; may be indefinite before projection."""
    theta = check_finite(theta)
    G = record_gradients(m, d.X, d.y, theta)
    S = G.T @ G / d.n - 4.0 * c * c * np.outer(theta, theta)
    return (S + S.T) / 2.0


def estimate_pieces(
    d: Dataset,
    m: LossModel,
    fit: PrivateFit,
    phi2: PrivacyBudget,
    phi3: PrivacyBudget,
    rng: RngStream,
) -> AsymptoticPieces:
    """Release H̃ with budget φ₂ and Σ̃ with budget φ₃, both at θ̃."""
    if phi2.kind is not phi3.kind:
        raise InvalidParameter("phi2 and phi3 must share one privacy kind", field="phi3")
    if d.n != fit.n or d.dim != fit.dim:
        raise DimensionMismatch(
            f"fit was trained on n={fit.n}, d'={fit.dim}; dataset has n={d.n}, d'={d.dim}"
        )
    theta = fit.theta_tilde
    sens_h = hessian_sensitivity(m, d.n)
    sens_s = covariance_sensitivity(m, d.n, theta)
    logger.debug("estimate_pieces: Sens(H)=%.6g Sens(Sigma)=%.6g", sens_h, sens_s)

    H_tilde = mechanisms.priv_spd_mat(
        empirical_hessian(d, m, theta, fit.c), sens_h, phi2, fit.c, rng.child(0)
    )
    Sigma_tilde = mechanisms.priv_spd_mat(
        empirical_covariance(d, m, theta, fit.c), sens_s, phi3, fit.c, rng.child(1)
    )
    return AsymptoticPieces(H_tilde=H_tilde, Sigma_tilde=Sigma_tilde, n=d.n)


# ============== QUANTILES ==============


def _order_index(q: float, m: int) -> int:
    """0-based position of the ceil(q·m)-th order statistic, clamped to [0, m-1]."""
    k = math.ceil(q * m - _INDEX_EPS)
    return min(max(k, 1), m) - 1


def empirical_quantile_interval(samples: Sequence[float], alpha: float) -> tuple[float, float]:
    """
    (α/2, 1-α/2) empirical quantiles of a sample.

    Uses the order statistic at 1-based index ceil(q·m) of the sorted sample.
    """
    if len(samples) == 0:
        raise EmptySamples("cannot take quantiles of an empty sample")
    if not 0 < alpha < 1:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}", field="alpha")
    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    m = ordered.shape[0]
    return (
        float(ordered[_order_index(alpha / 2.0, m)]),
        float(ordered[_order_index(1.0 - alpha / 2.0, m)]),
    )


def coordinate_quantiles(samples: npt.ArrayLike, alpha: float) -> tuple[FloatArray, FloatArray]:
    """Column-wise version of `empirical_quantile_interval` for an (m, d) sample."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptySamples("expected a non-empty (m, d) sample")
    if not 0 < alpha < 1:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}", field="alpha")
    ordered = np.sort(arr, axis=0)
    m = ordered.shape[0]
    return ordered[_order_index(alpha / 2.0, m)], ordered[_order_index(1.0 - alpha / 2.0, m)]


def standard_normal_quantile(p: float) -> float:
    return float(stats.norm.ppf(p))


# ============== MONTE-CARLO DRAWS ==============


def _draw_partitioned(
    m: int,
    workers: int,
    rng: RngStream,
    draw: Callable[[int, RngStream], FloatArray],
) -> FloatArray:
    """Split m draws into `workers` chunks, chunk k on child stream k, merged in order."""
    sizes = [len(part) for part in np.array_split(np.arange(m), workers)]
    jobs = [(size, rng.child(k)) for k, size in enumerate(sizes) if size > 0]
    if len(jobs) == 1:
        chunks = [draw(*jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda job: draw(*job), jobs))
    return np.concatenate(chunks, axis=0)


def _score_draws(pieces: AsymptoticPieces) -> Callable[[int, RngStream], FloatArray]:
    """Draws of H̃⁻¹G/√n with G ~ N(0, Σ̃), one row per draw."""
    root = pieces.Sigma_tilde.sqrt()
    scale = math.sqrt(pieces.n)

    def draw(size: int, stream: RngStream) -> FloatArray:
        z = mechanisms.sample_gaussian_iso(pieces.dim, 1.0, stream, size=size)
        G = z @ root
        return pieces.H_tilde.solve(G.T).T / scale

    return draw


def _interval_from_deviations(
    fit: PrivateFit, deviations: FloatArray, spec: CISpec, method: IntervalMethod
) -> IntervalSet:
    lo, hi = coordinate_quantiles(deviations, spec.alpha)
    return IntervalSet(
        lo=fit.theta_tilde + lo,
        hi=fit.theta_tilde + hi,
        alpha=spec.alpha,
        method=method,
        metadata={"m": spec.m, "workers": spec.workers},
    )


# ============== INTERVALS ==============


def ci_objective(
    fit: PrivateFit, pieces: AsymptoticPieces, spec: CISpec, rng: RngStream
) -> IntervalSet:
    """
    Monte-Carlo interval for a model trained by objective perturbation.

    Each draw is H̃⁻¹(G_i + β_i/√n)/√n with G_i ~ N(0, Σ̃) and β_i spherical
    Laplace at the training rate γ = ε'/2.
    """
    if fit.mechanism is not Mechanism.OBJECTIVE or fit.eps_prime is None:
        raise MechanismMismatch(f"ci_objective needs an obj fit, got {fit.mechanism.value}")
    if spec.method is not IntervalMethod.MONTE_CARLO:
        raise MechanismMismatch("objective-perturbation intervals are Monte-Carlo only")
    if pieces.dim != fit.dim:
        raise DimensionMismatch("pieces and fit differ in dimension")

    gamma = fit.eps_prime / 2.0
    root = pieces.Sigma_tilde.sqrt()
    sqrt_n = math.sqrt(pieces.n)

    def draw(size: int, stream: RngStream) -> FloatArray:
        G = mechanisms.sample_gaussian_iso(fit.dim, 1.0, stream.child(0), size=size) @ root
        beta = mechanisms.sample_spherical_laplace(fit.dim, gamma, stream.child(1), size=size)
        return pieces.H_tilde.solve((G + beta / sqrt_n).T).T / sqrt_n

    deviations = _draw_partitioned(spec.m, spec.workers, rng, draw)
    logger.info("ci_objective: %d Monte-Carlo draws, d'=%d", spec.m, fit.dim)
    return _interval_from_deviations(fit, deviations, spec, IntervalMethod.MONTE_CARLO)


def output_covariance(fit: PrivateFit, pieces: AsymptoticPieces) -> FloatArray:
    """U = σ²I + (1/n) H̃⁻¹ Σ̃ H̃⁻¹ for a zCDP output-perturbation fit."""
    if fit.sigma2 is None:
        raise MechanismMismatch("closed-form covariance needs a zCDP output fit")
    A = pieces.H_tilde.solve(pieces.Sigma_tilde.entries)
    sandwich = pieces.H_tilde.solve(A.T).T / pieces.n
    sandwich = (sandwich + sandwich.T) / 2.0
    return fit.sigma2 * np.eye(fit.dim) + sandwich


def ci_output(
    fit: PrivateFit, pieces: AsymptoticPieces, spec: CISpec, rng: RngStream
) -> IntervalSet:
    """
    Interval for a model trained by output perturbation.

    Pure DP: Monte-Carlo draws -β_i + H̃⁻¹G_i/√n with β_i spherical Laplace at
    γ = ncφ₁. zCDP: the error is exactly Gaussian with covariance U, giving
    θ̃[j] ± z_{α/2}·√U_jj without sampling; a Monte-Carlo variant drawing
    β_i ~ N(0, σ²I) is available for cross-checking.
    """
    if fit.mechanism not in (Mechanism.OUTPUT_DP, Mechanism.OUTPUT_ZCDP):
        raise MechanismMismatch(f"ci_output needs an output fit, got {fit.mechanism.value}")
    if pieces.dim != fit.dim:
        raise DimensionMismatch("pieces and fit differ in dimension")
    if fit.mechanism is Mechanism.OUTPUT_DP and spec.method is not IntervalMethod.MONTE_CARLO:
        raise MechanismMismatch("pure-DP output-perturbation intervals are Monte-Carlo only")
    if spec.method is IntervalMethod.BOOTSTRAP:
        raise MechanismMismatch("bootstrap is not an interval construction method")

    if spec.method is IntervalMethod.CLOSED_FORM_ZCDP:
        z = standard_normal_quantile(1.0 - spec.alpha / 2.0)
        half = z * np.sqrt(np.diag(output_covariance(fit, pieces)))
        logger.info("ci_output: closed-form zCDP interval, z=%.6f", z)
        return IntervalSet(
            lo=fit.theta_tilde - half,
            hi=fit.theta_tilde + half,
            alpha=spec.alpha,
            method=IntervalMethod.CLOSED_FORM_ZCDP,
        )

    score = _score_draws(pieces)
    dim = fit.dim
    gamma, sigma2 = fit.gamma, fit.sigma2

    def privacy(size: int, stream: RngStream) -> FloatArray:
        if gamma is not None:
            return mechanisms.sample_spherical_laplace(dim, gamma, stream, size=size)
        assert sigma2 is not None  # PrivateFit guarantees one of gamma/sigma2
        return mechanisms.sample_gaussian_iso(dim, sigma2, stream, size=size)

    def draw(size: int, stream: RngStream) -> FloatArray:
        return score(size, stream.child(0)) - privacy(size, stream.child(1))

    deviations = _draw_partitioned(spec.m, spec.workers, rng, draw)
    logger.info("ci_output: %d Monte-Carlo draws, d'=%d", spec.m, fit.dim)
    return _interval_from_deviations(fit, deviations, spec, IntervalMethod.MONTE_CARLO)
