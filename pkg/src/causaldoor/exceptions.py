"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`DoorError`,
so callers (and the CLI) can separate user-facing failures from bugs.
"""


class DoorError(Exception):
    """Base class for all package errors."""


class ValidationError(DoorError, ValueError):
    """Input data or model specification is invalid."""


class ConvergenceError(DoorError, RuntimeError):
    """A maximum likelihood fit failed to converge or has no finite solution."""


class PositivityError(DoorError, ValueError):
    """A propensity score is numerically 0 or 1, so inverse weights are undefined."""


class DegenerateVarianceError(DoorError, ArithmeticError):
    """Estimated variance is zero while the estimate differs from the null."""
