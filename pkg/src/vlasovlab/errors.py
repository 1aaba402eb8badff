"""Exception types shared by all modules."""


class VlasovLabError(Exception):
    """Base class for library errors."""


class DomainError(VlasovLabError, ValueError):
    """A point lies outside the domain where a formula is defined."""


class UsageError(VlasovLabError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ToleranceError(VlasovLabError, RuntimeError):
    """A quadrature or integrator failed to meet its error budget."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SingularCharacteristicError(VlasovLabError, RuntimeError):
    """A massless characteristic approached the excluded set v = 0."""
