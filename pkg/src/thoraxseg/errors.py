"""Exception taxonomy shared by the library and the CLI.

Each class maps to one CLI exit code so scripted callers can branch on
failures without parsing prose: usage/config problems exit 2, data problems
exit 3, numerical aborts exit 4.
"""


class ThoraxsegError(Exception):
    """Base class for all library errors."""


class UsageError(ThoraxsegError):
    """Caller misused an API or the command line (bad flag, bad call order)."""


class ConfigError(ThoraxsegError):
    """A configuration value is missing, unknown, or out of its valid range."""


class ShapeError(ThoraxsegError):
    """Tensor shapes are incompatible; message names both offending shapes."""


class DataError(ThoraxsegError):
    """Input data is malformed, missing, or inconsistent with its manifest."""


class NumericalAbort(ThoraxsegError):
    """Training produced non-finite values and cannot continue."""
