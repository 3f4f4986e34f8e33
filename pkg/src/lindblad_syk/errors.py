"""Exception types shared across the package."""


class LindbladSYKError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LindbladSYKError, ValueError):
    """A precondition on an argument was violated."""


class ResourceLimitError(LindbladSYKError):
    """The requested object would exceed a configured size budget."""


class ConsistencyError(LindbladSYKError):
    """An internal invariant (commutation, pairing, convention) failed."""


class ConvergenceError(LindbladSYKError):
    """An iterative method stopped without meeting its tolerance.

    Attributes
    ----------
    best_residual : float
        Smallest residual reached before giving up.
    """

    def __init__(self, message, best_residual=float("nan"), trace=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.trace = list(trace) if trace is not None else []


class DivergenceError(ConvergenceError):
    """A fixed-point iteration grew its residual over the patience window."""


class NumericError(LindbladSYKError, ArithmeticError):
    """NaN or overflow encountered in a numerical kernel."""


class NoEPFoundError(LindbladSYKError):
    """The imaginary part does not change character inside the bracket."""


class FitError(LindbladSYKError):
    """A least-squares fit failed to converge or is ill-posed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
