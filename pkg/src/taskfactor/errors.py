"""Exception types shared across the package.

The command line maps these onto exit codes: data and validation problems
exit with 1, numeric failures with 2.
"""


class TaskFactorError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(TaskFactorError):
    """An input file or in-memory structure violates the documented format."""


class ValidationFailure(TaskFactorError):
    """A dataset or configuration failed validation checks."""


class NumericError(TaskFactorError):
    """A numeric precondition failed or a computation degenerated."""
