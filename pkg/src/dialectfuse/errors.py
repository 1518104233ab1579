"""Exception hierarchy shared by every subpackage."""


class DialectFuseError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DialectFuseError, ValueError):
    """Tensor shapes or dimensions do not agree."""


class ConfigError(DialectFuseError, ValueError):
    """A model or run configuration is inconsistent."""


class TapeError(DialectFuseError, RuntimeError):
    """The autodiff tape was misused (consumed twice, stale inputs, ...)."""


class NumericalFault(DialectFuseError, FloatingPointError):
    """A NaN/Inf appeared, or a quantity is undefined (e.g. zero-norm cosine)."""


class FormatError(DialectFuseError, ValueError):
    """An on-disk artifact is malformed."""


class DataError(DialectFuseError, ValueError):
    """Dataset contents are inconsistent with their declared schema."""
