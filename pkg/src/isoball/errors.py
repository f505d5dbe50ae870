"""Exception hierarchy shared by every isoball module."""


class IsoballError(Exception):
    """Base class for all errors raised by isoball."""


class DomainError(IsoballError, ValueError):
    """An argument lies outside the domain of the requested operation."""


class ConvergenceError(IsoballError, RuntimeError):
    """An iterative method hit its step cap or a quadrature did not converge."""


class FactorizationError(IsoballError, RuntimeError):
    """A covariance matrix could not be factorized within the jitter policy."""


class TruncationError(IsoballError, RuntimeError):
    """The harmonic truncation degree is too low for the requested scale."""


class MeshResolutionError(IsoballError, ValueError):
    """A mesh is too coarse for the requested radius or too large to build."""


class ConfigError(IsoballError, ValueError):
    """Invalid run configuration."""
