"""Exception hierarchy shared by all emgnet modules.

Each class maps to one CLI exit code so that callers can tell a bad
invocation apart from bad data or a numerical blow-up.
"""


class EmgNetError(Exception):
    exit_code = 1


class UsageError(EmgNetError, ValueError):
    """Invalid arguments or an operation called outside its contract."""

    exit_code = 1


class ShapeError(UsageError):
    """Array dimensions do not line up; the message names the axis."""


class SpecError(UsageError):
    """A layer or network description is internally inconsistent."""


class DataError(EmgNetError):
    """Dataset on disk is missing, malformed or inconsistent."""

    exit_code = 2


class NumericError(EmgNetError, ArithmeticError):
    """NaN or Inf reached a place where only finite values are allowed."""

    exit_code = 3
