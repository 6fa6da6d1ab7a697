"""Exception types raised across the package."""


class SobolMatError(Exception):
    """Base class for all package errors."""


class DomainError(SobolMatError, ValueError):
    """An input lies outside the unit hypercube."""


class ZeroVarianceError(SobolMatError, ZeroDivisionError):
    """An output has zero variance, so it cannot be normalized."""

    def __init__(self, output, message=None):
        self.output = output
        super().__init__(message or f"output {output} has zero variance")


class HadamardDivisionError(SobolMatError, ZeroDivisionError):
    """Elementwise division met a zero denominator."""

    def __init__(self, index):
        self.index = tuple(int(i) for i in index)
        super().__init__(f"zero denominator at {self.index}; an output has zero variance")


class OddRowCountError(SobolMatError, ValueError):
    """A two-fold split was requested for an odd number of rows."""


class FactorizationFailure(SobolMatError, ArithmeticError):
    """The regularized Gram matrix stayed indefinite after maximal jitter."""


class NonFiniteLikelihood(SobolMatError, ArithmeticError):
    """The marginal log-likelihood evaluated to NaN or infinity."""


class IntegrationFailure(SobolMatError, ArithmeticError):
    """A marginal integral produced a non-finite value."""


class NegativeQError(SobolMatError, ArithmeticError):
    """The variance of a Sobol' matrix element came out materially negative."""

    def __init__(self, index, value):
        self.index = tuple(int(i) for i in index)
        self.value = float(value)
        super().__init__(f"negative error variance {value:.3e} at {self.index}")
