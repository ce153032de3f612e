"""Exception hierarchy shared by every module.

Input problems (bad arguments, malformed files, infeasible requests) derive
from :class:`InputError`; numerical breakdowns (non-convergence, degenerate
statistics) derive from :class:`NumericalError`.  The CLI maps the two to
exit codes 2 and 3.
"""


class FadingError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FadingError, ValueError):
    """An argument, flag or file is invalid."""


class DomainError(InputError):
    """A numeric argument lies outside the function's domain."""


class ParameterCapError(InputError):
    """A distribution parameter lies outside the supported range."""


class ConstraintError(InputError):
    """A model does not satisfy the unit-mean fading constraint."""


class InfeasibleError(InputError):
    """No parameter set of the family reaches the requested statistic."""


class NumericalError(FadingError, ArithmeticError):
    """A numerical procedure failed."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate, error_bound):
        super().__init__(f"{message} (estimate={estimate!r}, error bound={error_bound!r})")
        self.estimate = estimate
        self.error_bound = error_bound


class DegenerateError(NumericalError):
    """A statistic is undefined for the given data (e.g. constant input)."""


class ParseError(InputError):
    """A series file could not be parsed."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path
