"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes (see ``rnmt.cli``).
"""


class RnmtError(Exception):
    """Base class for all package errors."""


class DimensionError(RnmtError, ValueError):
    """Tensor shapes do not line up."""


class ParameterError(RnmtError, ValueError):
    """An argument is outside its admissible range."""


class ContractError(RnmtError):
    """A call violated an operation's pre-conditions."""


class ConfigError(RnmtError):
    """Invalid or inconsistent configuration."""


class DataFormatError(RnmtError):
    """Input files are malformed or inconsistent."""


class NumericError(RnmtError, FloatingPointError):
    """NaN/Inf produced, or a gradient check failed."""
