"""
Exception hierarchy for dperm.

Every error carries the exit code the CLI reports for it.
"""


class DpermError(Exception):
    """Base class for all dperm failures."""

    exit_code = 1


class ConfigError(DpermError):
    """Invalid configuration; `field` names the offending setting."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class InvalidParameter(ConfigError, ValueError):
    """A numeric precondition was violated."""


class MissingDelta(ConfigError):
    def __init__(self) -> None:
        super().__init__("converting zCDP to approximate DP requires delta", field="delta")


class MechanismMismatch(ConfigError):
    """Interval method does not match how the fit was produced."""

    def __init__(self, message: str):
        super().__init__(message, field="method")


class BudgetTooSmall(DpermError):
    exit_code = 3


class NoConvergence(DpermError):
    exit_code = 4

    def __init__(self, max_iter: int, grad_norm: float):
        super().__init__(
            f"solver did not reach tolerance in {max_iter} iterations "
            f"(gradient norm {grad_norm:.3e})"
        )
        self.max_iter = max_iter
        self.grad_norm = grad_norm


class EigenFailure(DpermError):
    exit_code = 4


class EvaluationAborted(DpermError):
    """Raised when bootstrap replicates fail; carries the partial report."""

    exit_code = 4

    def __init__(self, report: object, failures: list[tuple[int, str]]):
        super().__init__(f"{len(failures)} replicate(s) failed; first: {failures[0][1]}")
        self.report = report
        self.failures = failures


class DataError(DpermError):
    exit_code = 5


class NormViolation(DataError):
    def __init__(self, index: int, norm: float):
        super().__init__(f"record {index} has L2 norm {norm:.12g} > 1")
        self.index = index


class BadLabel(DataError):
    def __init__(self, index: int, label: object):
        super().__init__(f"record {index} has label {label!r}, expected -1 or +1")
        self.index = index


class DimensionMismatch(DataError):
    pass


class UnknownCategory(DataError):
    def __init__(self, column: str, value: object):
        super().__init__(f"column {column!r}: value {value!r} is not a declared category")
        self.column = column
        self.value = value


class NotBinaryTarget(DataError):
    pass


class EmptySamples(DataError):
    pass
