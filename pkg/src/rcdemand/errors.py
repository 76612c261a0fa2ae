"""Exception hierarchy shared by every module."""


class RcDemandError(Exception):
    """Base class for all package errors."""


class DimensionError(RcDemandError, ValueError):
    """An input has the wrong shape; ``field`` names the offending input."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NormalizationError(RcDemandError, ValueError):
    """A grid density does not integrate to one."""


class SupportError(RcDemandError, ValueError):
    """Requested menus lie outside the region where a demand oracle is valid."""

    def __init__(self, message, offending=None):
        self.offending = offending
        super().__init__(message)


class ConvergenceError(RcDemandError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    The best iterate found so far is attached as ``best`` so callers can
    inspect or warm start from it.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        self.best = best
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class SignPatternError(RcDemandError, RuntimeError):
    """The share Jacobian violated the monotonicity pattern the model implies."""


class CoverageError(RcDemandError, ValueError):
    """Directions in a sinogram do not cover the hemisphere densely enough."""


class ConfigError(RcDemandError, ValueError):
    """A run configuration is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
