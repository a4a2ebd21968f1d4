"""Exception hierarchy shared by all treeclust modules."""


class TreeclustError(Exception):
    """Base class for every error raised by treeclust."""


class InvalidInputError(TreeclustError, ValueError):
    """Malformed user input: wrong dimension, non-finite values, ragged rows."""


class ParameterError(TreeclustError, ValueError):
    """A parameter lies outside the admissible range of an operation."""


class PreconditionError(TreeclustError, ValueError):
    """A numerical precondition of an operation does not hold."""


class GapTooSmallError(PreconditionError):
    """The admissible level interval inside a density gap is empty."""


class PrecisionError(PreconditionError):
    """Grid resolution too coarse for the requested geometric operation."""


class UnsupportedDimensionError(TreeclustError, ValueError):
    """Operation restricted to low dimensions was called on higher-dimensional data."""


class ConstructionError(TreeclustError, RuntimeError):
    """A constructed object failed its own self-validation."""


class EnvelopeError(TreeclustError, RuntimeError):
    """Rejection sampling envelope is too loose to be practical."""


class NoContainingClusterError(TreeclustError, LookupError):
    """No single cluster of a hierarchy contains the requested indices."""


class ConfigError(TreeclustError, ValueError):
    """Conflicting or incomplete run configuration."""
