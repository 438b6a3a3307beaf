"""Exception hierarchy shared by all modules."""


class ShellGibbsError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ShellGibbsError, ValueError):
    """An argument lies outside the domain of the operation."""


class RangeError(ShellGibbsError, ArithmeticError):
    """A result would overflow double precision."""


class ResourceError(ShellGibbsError, MemoryError):
    """A symbolic computation exceeded its configured size budget."""


class BoundaryClosureError(DomainError):
    """A polynomial touches shells whose interactions need modes beyond the grid."""


class SchemeMismatchError(DomainError):
    """A step function was called with a config for a different scheme."""


class StepFailure(ShellGibbsError):
    """The implicit solver did not converge, even after step halving.

    Attributes
    ----------
    state : last accepted state (``ShellState``)
    time : time of ``state``
    """

    def __init__(self, message, state=None, time=None):
        super().__init__(message)
        self.state = state
        self.time = time


class BlowupError(ShellGibbsError):
    """The post-step negative Sobolev norm exceeded the configured cap."""

    def __init__(self, message, state=None, time=None, norm=None):
        super().__init__(message)
        self.state = state
        self.time = time
        self.norm = norm
