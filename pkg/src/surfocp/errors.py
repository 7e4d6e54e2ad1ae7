"""Exception types raised by the package."""


class SurfocpError(Exception):
    """Base class for all package errors."""


class ResourceLimitError(SurfocpError):
    pass


class TubularNeighborhoodError(SurfocpError, ValueError):
    pass


class DegenerateGeometryError(SurfocpError):
    pass


class ChartFailureError(SurfocpError):
    pass


class UnsupportedMotionError(SurfocpError, NotImplementedError):
    pass


class CoefficientValidityError(SurfocpError):
    pass


class SolverFailureError(SurfocpError):
    """A linear solve produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(SurfocpError):
    """The active-set iteration did not converge; carries the last residuals."""

    def __init__(self, message, residuals=None, iterations=None):
        super().__init__(message)
        self.residuals = residuals
        self.iterations = iterations


class DegenerateProblemError(SurfocpError):
    pass


class ConfigError(SurfocpError, ValueError):
    pass
