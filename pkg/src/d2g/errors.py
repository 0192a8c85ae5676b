"""Exception types shared across the package."""


class D2gError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(D2gError):
    """Array shapes are inconsistent with the requested operation."""


class NotPositiveDefinite(D2gError):
    """A matrix that must be SPD failed its Cholesky factorization."""


class InvalidTarget(D2gError):
    """A target value is outside the domain of the loss."""


class NonFiniteUpdate(D2gError):
    """An optimizer step produced a NaN or infinity."""


class SingularNoisePrecision(D2gError):
    """A per-example noise precision cannot be inverted."""


class ParseError(D2gError):
    """A data file could not be parsed; the message names the location."""


class ConstantColumn(D2gError):
    """Standardization was requested for a zero-variance feature."""


class EmptyAfterFilter(D2gError):
    """A dataset filter removed every row."""


class ConfigError(D2gError):
    """An experiment config is missing, malformed, or inconsistent."""


class HashMismatch(D2gError):
    """An artifact was produced under a different config than the one given."""
