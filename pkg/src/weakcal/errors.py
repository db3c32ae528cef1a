"""Exception types.  The CLI maps these onto exit codes."""


class WeakcalError(Exception):
    """Base class for all errors raised by weakcal."""

    exit_code = 1


class DataError(WeakcalError, ValueError):
    """Malformed, missing or empty input data (exit code 3)."""

    exit_code = 3


class NumericError(WeakcalError, ValueError):
    """A numerically undefined configuration (exit code 4)."""

    exit_code = 4


class SingularPriorError(NumericError):
    """The decontamination rewrite divides by zero for this prior / mixture."""
