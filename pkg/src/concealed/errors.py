"""Exception hierarchy shared by all modules."""


class ConcealedError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ConcealedError, ValueError):
    """Invalid scenario configuration or initial data."""


class NumericalError(ConcealedError, ArithmeticError):
    """A step of a numerical method failed."""


class SingularMatrixError(NumericalError):
    """A mass matrix could not be inverted."""


class TrajectoryCrossingError(NumericalError):
    """The Lagrangian map lost monotonicity (J <= 0 at some label)."""


class StabilityError(NumericalError):
    """A step-size restriction (CFL) was violated."""
