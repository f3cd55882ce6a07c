"""Exception types shared across the package.

The CLI maps these onto exit codes: ``InputError`` -> 2, ``FitError`` -> 3.
"""


class BkmrError(Exception):
    """Base class for all package errors."""


class InputError(BkmrError, ValueError):
    """Caller supplied data or parameters that violate a precondition."""


class ElicitationError(InputError):
    """OLS-based prior elicitation is impossible for the given data."""


class NumericalError(BkmrError, RuntimeError):
    """A factorization failed where the invariants say it cannot."""


class FitError(BkmrError, RuntimeError):
    """The coordinate-ascent loop diverged.

    The partial convergence trace is attached so callers can inspect it.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
