"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError (and its ShapeError
subclass) to 1, DataError to 2, NumericError to 3.
"""


class ByteLMError(Exception):
    """Base class for package errors."""


class ConfigError(ByteLMError):
    """Invalid configuration, option, or argument combination."""


class ShapeError(ConfigError):
    """Tensor dimensions incompatible with the requested operation."""


class DataError(ByteLMError):
    """Missing, malformed, or out-of-range input data."""


class NumericError(ByteLMError):
    """Non-finite values or other numeric breakdown during compute."""
