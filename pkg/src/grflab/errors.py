"""Exception hierarchy shared by every grflab module."""


class GrfError(Exception):
    """Base class for all grflab errors."""


class InputError(GrfError, ValueError):
    """Malformed or invariant-violating input (bad symmetry, dims, non-PD metric)."""


class PreconditionError(GrfError, ValueError):
    """An operation was called outside its domain of validity."""


class SolverError(GrfError, RuntimeError):
    """An iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConsistencyError(GrfError, RuntimeError):
    """An internal identity that must hold numerically did not."""
