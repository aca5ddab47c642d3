"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class DemiNetError(Exception):
    """Base class for all package errors."""


class DimensionError(DemiNetError):
    """Operands have incompatible or invalid shapes."""


class ContractError(DemiNetError):
    """A documented precondition was violated by the caller."""


class NumericError(DemiNetError):
    """NaN/Inf surfaced at an operation boundary, or a gradient went bad."""


class ConfigError(DemiNetError):
    """Invalid or inconsistent experiment configuration."""


class DataError(DemiNetError):
    """Unreadable, malformed or degenerate input data."""
