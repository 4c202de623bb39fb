"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 2, numeric and
training failures exit 3, I/O and file-format problems exit 4.
"""


class LosparseError(Exception):
    exit_code = 1


class ShapeError(LosparseError, ValueError):
    exit_code = 3


class BudgetError(LosparseError, ValueError):
    exit_code = 2


class ConfigError(LosparseError, ValueError):
    exit_code = 2


class EmptyInputError(LosparseError, ValueError):
    exit_code = 3


class ConvergenceError(LosparseError, ArithmeticError):
    exit_code = 3


class TrainingError(LosparseError, ArithmeticError):
    """Training diverged; ``step`` is the iteration that produced a non-finite loss."""

    exit_code = 3

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class CheckpointFormatError(LosparseError, ValueError):
    exit_code = 4


class StorageError(LosparseError, OSError):
    """A file could not be read or written."""

    exit_code = 4
