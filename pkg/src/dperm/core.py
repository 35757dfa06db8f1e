"""
Shared data model: datasets, privacy budgets, private fits and interval sets.

All types are immutable after construction. Arrays held by them are marked
read-only so they can be shared between workers.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
import numpy.typing as npt

from dperm.errors import (
    BadLabel,
    ConfigError,
    DataError,
    DimensionMismatch,
    InvalidParameter,
    MissingDelta,
    NormViolation,
)

FloatArray = npt.NDArray[np.float64]
ParamVector = FloatArray

NORM_TOLERANCE = 1e-9


def _frozen(a: npt.ArrayLike, dtype: type = np.float64) -> npt.NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ============== DATA ==============


@dataclass(frozen=True)
class Record:
    """One labeled example."""

    features: tuple[float, ...]
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    n labeled records stored column-wise.

    Args:
        X: (n, d') feature matrix, one row per record
        y: (n,) labels in {-1, +1}
    """

    X: FloatArray
    y: npt.NDArray[np.int64]

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise DimensionMismatch(f"features must be a 2-D table, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y, np.int64))

    @classmethod
    def from_records(cls, records: Sequence[Record]) -> Dataset:
        if not records:
            raise DataError("dataset must contain at least one record")
        width = len(records[0].features)
        for i, rec in enumerate(records):
            if len(rec.features) != width:
                raise DimensionMismatch(
                    f"record {i} has {len(rec.features)} features, expected {width}"
                )
        X = np.array([rec.features for rec in records], dtype=np.float64).reshape(len(records), width)
        return cls(X, np.array([rec.label for rec in records]))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def dim(self) -> int:
        """Model dimensionality d' (includes any constant column)."""
        return int(self.X.shape[1])

    @property
    def records(self) -> Iterator[Record]:
        for row, label in zip(self.X, self.y, strict=True):
            yield Record(tuple(float(v) for v in row), int(label))

    def take(self, rows: npt.ArrayLike) -> Dataset:
        idx = np.asarray(rows, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx])


def validate_dataset(d: Dataset) -> Dataset:
    """
    Check the dataset invariants and return it unchanged.

    Raises:
        DataError: empty dataset
        NormViolation: first record whose L2 norm exceeds 1 + 1e-9
        BadLabel: first record whose label is not -1 or +1
    """
    if d.n < 1:
        raise DataError("dataset must contain at least one record")
    norms = np.linalg.norm(d.X, axis=1)
    bad = np.flatnonzero(~(norms <= 1.0 + NORM_TOLERANCE))
    if bad.size:
        raise NormViolation(int(bad[0]), float(norms[bad[0]]))
    bad = np.flatnonzero((d.y != 1) & (d.y != -1))
    if bad.size:
        raise BadLabel(int(bad[0]), int(d.y[bad[0]]))
    return d


def check_finite(theta: npt.ArrayLike, name: str = "theta") -> ParamVector:
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} has non-finite entries", field=name)
    return arr


# ============== PRIVACY BUDGETS ==============


class PrivacyKind(str, Enum):
    PURE_DP = "dp"
    ZCDP = "zcdp"


class ConversionTarget(str, Enum):
    PURE_DP = "dp"
    ZCDP = "zcdp"
    APPROX_DP = "approx-dp"


@dataclass(frozen=True)
class PrivacyBudget:
    """ε for pure DP or ρ for zCDP. The two are never comparable as floats."""

    kind: PrivacyKind
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PrivacyKind(self.kind))
        if not (math.isfinite(self.value) and self.value > 0):
            raise InvalidParameter(f"privacy budget must be positive, got {self.value}", field="budget")

    @classmethod
    def pure(cls, epsilon: float) -> PrivacyBudget:
        return cls(PrivacyKind.PURE_DP, epsilon)

    @classmethod
    def zcdp(cls, rho: float) -> PrivacyBudget:
        return cls(PrivacyKind.ZCDP, rho)

    def __str__(self) -> str:
        symbol = "eps" if self.kind is PrivacyKind.PURE_DP else "rho"
        return f"{symbol}={self.value:g}"


@dataclass(frozen=True)
class ApproxDP:
    epsilon: float
    delta: float


@dataclass(frozen=True)
class BudgetSplit:
    """Allocation of one budget across parameter fit, Hessian and covariance."""

    phi1: PrivacyBudget
    phi2: PrivacyBudget
    phi3: PrivacyBudget

    def __post_init__(self) -> None:
        if not (self.phi1.kind == self.phi2.kind == self.phi3.kind):
            raise ConfigError("phi1, phi2 and phi3 must share one privacy kind", field="privacy")

    @classmethod
    def of(cls, kind: PrivacyKind | str, phi1: float, phi2: float, phi3: float) -> BudgetSplit:
        kind = PrivacyKind(kind)
        return cls(PrivacyBudget(kind, phi1), PrivacyBudget(kind, phi2), PrivacyBudget(kind, phi3))

    @property
    def kind(self) -> PrivacyKind:
        return self.phi1.kind

    def total(self) -> PrivacyBudget:
        return compose(self.phi1, self.phi2, self.phi3)


def compose(*budgets: PrivacyBudget) -> PrivacyBudget:
    """Sequential composition: same-kind budgets add up."""
    if not budgets:
        raise InvalidParameter("nothing to compose", field="budget")
    kinds = {b.kind for b in budgets}
    if len(kinds) > 1:
        raise ConfigError("cannot compose pure-DP and zCDP budgets", field="privacy")
    return PrivacyBudget(budgets[0].kind, math.fsum(b.value for b in budgets))


def convert_budget(
    b: PrivacyBudget,
    target: ConversionTarget | str,
    delta: float | None = None,
) -> PrivacyBudget | ApproxDP:
    """
    Convert a budget between privacy definitions.

    ε-DP implies (ε²/2)-zCDP; ρ-zCDP implies (ρ + 2√(ρ·ln(1/δ)), δ)-DP.

    Raises:
        MissingDelta: zCDP to approximate DP without delta
        ConfigError: zCDP to pure DP (no such implication)
    """
    target = ConversionTarget(target)
    if delta is not None and not 0 < delta < 1:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}", field="delta")

    if target is ConversionTarget.APPROX_DP:
        if b.kind is PrivacyKind.PURE_DP:
            return ApproxDP(b.value, delta if delta is not None else 0.0)
        if delta is None:
            raise MissingDelta
        rho = b.value
        return ApproxDP(rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta)), delta)

    if target.value == b.kind.value:
        return b
    if b.kind is PrivacyKind.PURE_DP:
        return PrivacyBudget.zcdp(b.value**2 / 2.0)
    raise ConfigError("zCDP does not imply pure differential privacy", field="privacy")


def epsilon_for_rho(rho: PrivacyBudget) -> PrivacyBudget:
    """Largest ε whose zCDP image ε²/2 equals ρ."""
    if rho.kind is not PrivacyKind.ZCDP:
        raise ConfigError("expected a zCDP budget", field="privacy")
    return PrivacyBudget.pure(math.sqrt(2.0 * rho.value))


# ============== RELEASED QUANTITIES ==============


class Mechanism(str, Enum):
    OBJECTIVE = "obj"
    OUTPUT_DP = "output-dp"
    OUTPUT_ZCDP = "output-zcdp"


@dataclass(frozen=True, eq=False)
class PrivateFit:
    """Released parameters plus the mechanism metadata interval construction needs."""

    theta_tilde: ParamVector
    mechanism: Mechanism
    n: int
    c: float
    gamma: float | None = None
    sigma2: float | None = None
    eps_prime: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        object.__setattr__(self, "theta_tilde", _frozen(check_finite(self.theta_tilde, "theta_tilde")))
        if self.n < 1 or self.c <= 0:
            raise InvalidParameter("fit needs n >= 1 and c > 0", field="c")
        uses_gamma = self.mechanism is not Mechanism.OUTPUT_ZCDP
        if uses_gamma != (self.gamma is not None) or uses_gamma == (self.sigma2 is not None):
            raise InvalidParameter(
                f"{self.mechanism.value} fit must carry exactly one of gamma/sigma2", field="mechanism"
            )
        for name in ("gamma", "sigma2", "eps_prime"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidParameter(f"{name} must be positive, got {value}", field=name)
        if (self.eps_prime is not None) != (self.mechanism is Mechanism.OBJECTIVE):
            raise InvalidParameter("eps_prime is present iff mechanism is obj", field="eps_prime")

    @property
    def dim(self) -> int:
        return int(self.theta_tilde.shape[0])

    def to_dict(self) -> dict[str, object]:
        return {
            "theta_tilde": [float(v) for v in self.theta_tilde],
            "mechanism": self.mechanism.value,
            "gamma": self.gamma,
            "sigma2": self.sigma2,
            "eps_prime": self.eps_prime,
            "c": self.c,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PrivateFit:
        try:
            return cls(
                theta_tilde=np.asarray(data["theta_tilde"], dtype=np.float64),
                mechanism=Mechanism(data["mechanism"]),
                n=int(data["n"]),
                c=float(data["c"]),
                gamma=data.get("gamma"),
                sigma2=data.get("sigma2"),
                eps_prime=data.get("eps_prime"),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"malformed fit artifact: {e}", field="fit") from e


class IntervalMethod(str, Enum):
    MONTE_CARLO = "monte-carlo"
    CLOSED_FORM_ZCDP = "zcdp-closed"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True, eq=False)
class IntervalSet:
    """Per-coordinate (lo, hi) at level 1 - alpha."""

    lo: ParamVector
    hi: ParamVector
    alpha: float
    method: IntervalMethod
    metadata: dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lo = check_finite(self.lo, "lo")
        hi = check_finite(self.hi, "hi")
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi differ in length")
        if not 0 < self.alpha < 1:
            raise InvalidParameter(f"alpha must lie in (0, 1), got {self.alpha}", field="alpha")
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            raise InvalidParameter(f"interval {int(bad[0])} has lo > hi", field="lo")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "method", IntervalMethod(self.method))

    @property
    def lengths(self) -> FloatArray:
        return self.hi - self.lo

    def contains(self, theta: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        theta = np.asarray(theta, dtype=np.float64)
        return (self.lo <= theta) & (theta <= self.hi)

    def to_dict(self) -> dict[str, object]:
        return {
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "alpha": self.alpha,
            "method": self.method.value,
        }
