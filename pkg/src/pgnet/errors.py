"""Exception types shared across the package."""


class PgnetError(Exception):
    """Base class for all package errors."""


class DimensionError(PgnetError, ValueError):
    """Array shapes or extents do not agree."""


class ConfigError(PgnetError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(PgnetError, RuntimeError):
    """An API precondition was violated (e.g. non-scalar loss passed to backward)."""


class NumericalError(PgnetError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class FormatError(PgnetError, ValueError):
    """A file on disk is malformed or does not match its header."""
