"""Exception hierarchy shared by all delaycredit modules."""

from __future__ import annotations


class DelayCreditError(Exception):
    """Base class for every error raised by this package."""


class InputError(DelayCreditError):
    """Bad user input: malformed files, inconsistent parameters."""


class NumericalError(DelayCreditError):
    """A solver could not produce a finite, converged result."""


# market_data
class MissingColumn(InputError):
    pass


class NonMonotoneYears(InputError):
    pass


class NObsTooSmall(InputError):
    pass


class NonPositiveValue(InputError):
    pass


class WindowNotCovered(InputError):
    pass


class TooFewKnots(InputError):
    pass


class DtNotAligned(InputError):
    pass


# sdde / monte_carlo
class SingularImplicitStep(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NonFiniteValue(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class AllPathsExcluded(NumericalError):
    pass


# pde / expint / pricing
class BadParameters(InputError):
    pass


class NonFiniteCoefficient(NumericalError):
    pass


class BreakdownNotConverged(NumericalError):
    pass


class LagOutOfMemory(InputError):
    pass


class LatticeMismatch(InputError):
    pass
