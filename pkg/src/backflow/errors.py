"""Exception types raised by the backflow numerics."""


class BackflowError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateStateError(BackflowError, ValueError):
    """A state (or profile) has zero norm and cannot be normalized."""


class NotApplicableError(BackflowError, ValueError):
    """An operation was called outside the case it is defined for."""


class AccuracyError(BackflowError, RuntimeError):
    """A quadrature could not reach its accuracy target.

    Attributes
    ----------
    t : float or None
        The time at which the failure occurred, when meaningful.
    estimate : float or None
        The achieved error estimate.
    """

    def __init__(self, message, t=None, estimate=None):
        super().__init__(message)
        self.t = t
        self.estimate = estimate


class SolverError(BackflowError, RuntimeError):
    """The eigensolver did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
