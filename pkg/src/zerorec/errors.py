"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes (config 2, data 3, numeric 4), so every
stage raises one of them rather than bare ValueError/RuntimeError.
"""


class ZerorecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ZerorecError, ValueError):
    """Invalid configuration, incompatible shapes, or contract misuse."""


class DataError(ZerorecError):
    """Input data cannot be parsed or does not satisfy preconditions."""


class NumericError(ZerorecError):
    """Numeric failure during optimization (divergence, NaN loss)."""
