"""Exception types shared across the package."""

from __future__ import annotations


class StoreArbError(Exception):
    """Base class for all errors raised by storearb."""


class DomainViolation(StoreArbError, ValueError):
    """A flow lies outside the rate-constrained domain of a cost function."""


class InvalidCost(StoreArbError, ValueError):
    """A cost function is malformed (non-convex, C(0) != 0, bad limits)."""


class InvalidEfficiency(StoreArbError, ValueError):
    pass


class InvalidProblem(StoreArbError, ValueError):
    pass


class InfeasibleSchedule(StoreArbError, ValueError):
    pass


class InfeasibleProblem(StoreArbError):
    """No schedule satisfies the capacity, rate and boundary constraints."""


class InternalInvariantViolation(StoreArbError, RuntimeError):
    pass


class GridInfeasible(StoreArbError):
    pass


class TooLarge(StoreArbError):
    pass


class ParseError(StoreArbError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(StoreArbError, ValueError):
    pass
