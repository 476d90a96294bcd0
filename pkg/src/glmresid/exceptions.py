"""Exception types shared across the package."""


class GLMResidError(Exception):
    """Base class for errors raised by glmresid."""


class DomainError(GLMResidError, ValueError):
    """A value lies outside the mathematical domain of a function."""


class RankDeficientError(GLMResidError, ValueError):
    """The design matrix does not have full column rank."""


class ConvergenceError(GLMResidError, RuntimeError):
    """IRLS failed to converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class NumericalError(GLMResidError, ArithmeticError):
    """A derived quantity is numerically unusable (e.g. a negative variance)."""


class ResidualSupportWarning(UserWarning):
    """A residual fell outside the open support of its true-residual law."""
