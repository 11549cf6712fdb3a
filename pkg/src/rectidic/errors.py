"""Exception types raised across the package."""


class RectiDICError(Exception):
    """Base class for all package errors."""


class InvalidParameter(RectiDICError, ValueError):
    pass


class OutOfBounds(RectiDICError):
    pass


class ImageIOError(RectiDICError, OSError):
    pass


class DegenerateConfiguration(RectiDICError):
    """Point configuration does not determine a unique homography."""


class EstimationFailed(RectiDICError):
    pass


class DegenerateSubset(RectiDICError):
    """A subset has zero intensity variance under a zero-normalized criterion."""


class SeedFailed(RectiDICError):
    pass


class GeometryViolation(RectiDICError):
    """An evaluated object point lies on or behind the camera plane."""
