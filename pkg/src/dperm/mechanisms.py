"""
Noise primitives: seeded random streams, the spherical Laplace sampler, the
isotropic Gaussian mechanism and private release of symmetric positive
definite matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import logging

import numpy as np
import numpy.typing as npt
from scipy import linalg

from dperm.core import FloatArray, PrivacyBudget, PrivacyKind
from dperm.errors import EigenFailure, InvalidParameter

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
EIGENVALUE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible random stream.

    Identical (seed, stream_id, parent) always yields the same draws. Child
    streams are independent of each other and of their parent.
    """

    seed: int
    stream_id: int = 0
    parent: tuple[int, ...] = ()

    def child(self, stream_id: int) -> RngStream:
        return RngStream(self.seed, stream_id, (*self.parent, self.stream_id))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(*self.parent, self.stream_id))
        return np.random.Generator(np.random.PCG64(seq))


# ============== SAMPLERS ==============


def laplace_rate(sensitivity: float, phi: float) -> float:
    """γ for spherical Laplace noise: φ / Sens."""
    return phi / sensitivity


def gaussian_variance(sensitivity: float, rho: float) -> float:
    """Per-coordinate variance for ρ-zCDP: Sens² / (2ρ)."""
    return sensitivity**2 / (2.0 * rho)


def sample_spherical_laplace(
    dim: int, gamma: float, rng: RngStream, size: int | None = None
) -> FloatArray:
    """
    Draw β with density proportional to exp(-γ‖β‖₂).

    The radius is Gamma(shape=dim, rate=γ) and the direction is uniform on
    the unit sphere (a normalized standard Gaussian vector).

    Args:
        dim: dimensionality of β
        gamma: rate γ > 0
        rng: stream to draw from
        size: number of draws; None returns a single (dim,) vector

    Returns:
        Array of shape (dim,) or (size, dim)
    """
    if dim < 1:
        raise InvalidParameter(f"dim must be >= 1, got {dim}", field="dim")
    if not gamma > 0:
        raise InvalidParameter(f"gamma must be positive, got {gamma}", field="gamma")
    gen = rng.generator()
    count = 1 if size is None else size
    radius = gen.gamma(shape=dim, scale=1.0 / gamma, size=count)
    direction = gen.standard_normal((count, dim))
    norms = np.linalg.norm(direction, axis=1)
    # a zero Gaussian vector has probability zero, but guard the division
    norms[norms == 0.0] = 1.0
    draws = direction / norms[:, None] * radius[:, None]
    return draws[0] if size is None else draws


def sample_gaussian_iso(
    dim: int, sigma2: float, rng: RngStream, size: int | None = None
) -> FloatArray:
    """I.i.d. N(0, sigma2) coordinates, shape (dim,) or (size, dim)."""
    if dim < 1:
        raise InvalidParameter(f"dim must be >= 1, got {dim}", field="dim")
    if not sigma2 > 0:
        raise InvalidParameter(f"sigma2 must be positive, got {sigma2}", field="sigma2")
    gen = rng.generator()
    shape = (dim,) if size is None else (size, dim)
    return gen.normal(0.0, np.sqrt(sigma2), shape)


# ============== SPD RELEASE ==============


@dataclass(frozen=True, eq=False)
class SPDMatrix:
    """Symmetric matrix whose eigenvalues are all at least `floor`."""

    entries: FloatArray
    floor: float
    eigenvalues: FloatArray = field(repr=False)
    eigenvectors: FloatArray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    @cached_property
    def _cho(self) -> tuple[FloatArray, bool]:
        return linalg.cho_factor(self.entries)

    def solve(self, b: npt.ArrayLike) -> FloatArray:
        """M⁻¹ b via the Cholesky factor; b may be a vector or a (d, k) block."""
        return linalg.cho_solve(self._cho, np.asarray(b, dtype=np.float64))

    def sqrt(self) -> FloatArray:
        """Symmetric square root V diag(√Λ) Vᵀ."""
        V = self.eigenvectors
        return (V * np.sqrt(self.eigenvalues)) @ V.T

    def condition_number(self) -> float:
        return float(self.eigenvalues.max() / self.eigenvalues.min())


def project_spd(M: npt.ArrayLike, floor: float) -> SPDMatrix:
    """
    Symmetrize M and clamp its eigenvalues from below at `floor`.

    Raises:
        InvalidParameter: non-finite or non-square input, floor <= 0
        EigenFailure: the symmetric eigensolver did not converge
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidParameter(f"expected a square matrix, got shape {M.shape}", field="M")
    if not np.all(np.isfinite(M)):
        raise InvalidParameter("matrix has non-finite entries", field="M")
    if not floor > 0:
        raise InvalidParameter(f"eigenvalue floor must be positive, got {floor}", field="c")

    sym = (M + M.T) / 2.0
    try:
        eigvals, eigvecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as e:
        raise EigenFailure(f"eigendecomposition failed: {e}") from e

    clamped = np.maximum(eigvals, floor)
    out = (eigvecs * clamped) @ eigvecs.T
    out = (out + out.T) / 2.0
    for arr in (out, clamped, eigvecs):
        arr.setflags(write=False)
    return SPDMatrix(entries=out, floor=floor, eigenvalues=clamped, eigenvectors=eigvecs)


def priv_spd_mat(
    M: npt.ArrayLike, sens: float, phi: PrivacyBudget, c: float, rng: RngStream
) -> SPDMatrix:
    """
    Release M privately as a positive definite matrix with eigenvalues >= 2c.

    Pure DP adds a reshaped d²-dimensional spherical Laplace vector with
    γ = φ/Sens; zCDP adds i.i.d. N(0, Sens²/(2φ)) to every entry.
    """
    M = np.asarray(M, dtype=np.float64)
    if not sens > 0:
        raise InvalidParameter(f"sensitivity must be positive, got {sens}", field="sens")
    if not c > 0:
        raise InvalidParameter(f"c must be positive, got {c}", field="c")
    d = M.shape[0]

    if phi.kind is PrivacyKind.PURE_DP:
        gamma = laplace_rate(sens, phi.value)
        logger.debug("PrivSPDMat: d=%d spherical Laplace gamma=%.6g", d, gamma)
        eta = sample_spherical_laplace(d * d, gamma, rng)
    else:
        sigma2 = gaussian_variance(sens, phi.value)
        logger.debug("PrivSPDMat: d=%d Gaussian sigma2=%.6g", d, sigma2)
        eta = sample_gaussian_iso(d * d, sigma2, rng)

    return project_spd(M + np.reshape(eta, (d, d)), 2.0 * c)
