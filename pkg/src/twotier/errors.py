"""Exception types raised across the package."""


class TwoTierError(Exception):
    """Base class for all package errors."""


class DimensionError(TwoTierError, ValueError):
    """Array shapes are inconsistent with each other."""


class ValidationError(TwoTierError, ValueError):
    """An input violates a documented precondition."""


class SingularityError(TwoTierError, ArithmeticError):
    """A matrix that must be full rank is (numerically) rank deficient.

    ``column`` holds the index of the offending column when it is known.
    """

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConfigError(TwoTierError):
    """Simulation configuration could not be loaded or is invalid."""
