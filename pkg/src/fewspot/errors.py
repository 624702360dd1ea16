"""Exception hierarchy shared across the toolkit.

Each class carries the process exit code the CLI maps it to:
validation problems exit 2, numeric failures 3, I/O and format
problems 4.
"""


class FewspotError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(FewspotError):
    """Bad inputs, bad configuration, violated preconditions."""

    exit_code = 2


class NumericError(FewspotError):
    """Non-finite values, diverged training, degenerate arithmetic."""

    exit_code = 3


class DataFormatError(FewspotError):
    """Unreadable, truncated, or wrongly formatted files."""

    exit_code = 4
