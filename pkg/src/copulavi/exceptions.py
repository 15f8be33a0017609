"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigurationError(ValueError):
    """Inconsistent or invalid configuration (shapes, kinds, labels)."""


class NumericalError(ArithmeticError):
    """An iterative method failed to converge or produced non-finite output."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotFittedError(ValueError, AttributeError):
    """Estimator used before ``fit``."""
