"""Exception hierarchy shared by all modules."""


class AhglueError(Exception):
    """Base class for all package errors."""


class ConfigError(AhglueError):
    """Invalid parameters or configuration."""


class DegenerateMetricError(AhglueError):
    """A metric block failed to be positive definite."""


class GridError(AhglueError):
    """Grid is inconsistent or too coarse for the requested operation."""


class NonConvergenceError(AhglueError):
    """An iterative procedure failed to reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ClosenessError(AhglueError):
    """The interpolated metric lost positivity: the inputs are not close enough."""


class InsufficientDataError(AhglueError):
    """Too few usable samples for a fit."""


class NoMassError(AhglueError):
    """The boundary expansion does not resolve a z^n coefficient."""


class OverlapError(AhglueError):
    """Data are not exactly hyperbolic where an identification requires it."""


class GateFailure(AhglueError):
    """A regression gate (convergence order or spectral verdict) failed."""


class AssemblyError(AhglueError):
    """An assembled quadratic form violates symmetry or definiteness."""
