"""Exception types raised across the package.

Each carries an ``exit_code`` so the CLI can map failures onto its exit status.
"""


class GCAError(Exception):
    exit_code = 1


class ConfigError(GCAError, ValueError):
    exit_code = 2


class NumericError(GCAError, ArithmeticError):
    exit_code = 3


class DataIOError(GCAError, OSError):
    exit_code = 4


class DivergenceError(NumericError):
    """Simulated trajectory exceeded the overflow guard after all retries."""


class NonFiniteError(NumericError):
    """Training loss became NaN or infinite."""


class ConstantColumnError(NumericError):
    """A column has (near) zero standard deviation and cannot be z-scored."""


class TooShortError(GCAError, ValueError):
    """Series too short for the requested window geometry."""


class EmptyPartitionError(GCAError, ValueError):
    pass


class NoPositivesError(GCAError, ValueError):
    """Ground truth contains no positive edge, AUPRC is undefined."""


class MissingFieldError(GCAError, KeyError):
    exit_code = 4


class ParseError(DataIOError):
    def __init__(self, path, row, column, message):
        self.path, self.row, self.column = path, row, column
        super().__init__(f"{path}: row {row}, column {column}: {message}")
