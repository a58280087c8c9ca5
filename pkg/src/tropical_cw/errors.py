"""Exception types raised across the package.

Each class name matches the error tag used in messages and in the CLI's
stderr output, so callers can catch precisely what they expect.
"""


class TropicalError(Exception):
    """Base class for all package errors."""


class NonFiniteInput(TropicalError, ValueError):
    pass


class DimensionTooSmall(TropicalError, ValueError):
    pass


class DimensionMismatch(TropicalError, ValueError):
    pass


class InvalidThreshold(TropicalError, ValueError):
    pass


class BadQuadruple(TropicalError, ValueError):
    pass


class NonGenericInput(TropicalError, ValueError):
    pass


class BadDimension(TropicalError, ValueError):
    pass


class BadMagic(TropicalError, ValueError):
    pass


class CountMismatch(TropicalError, ValueError):
    pass


class Truncated(TropicalError, ValueError):
    pass


class ShapeError(TropicalError, ValueError):
    pass


class EmptyDataset(TropicalError, ValueError):
    pass


class ModelVersionError(TropicalError, ValueError):
    pass


class IoError(TropicalError, OSError):
    pass
