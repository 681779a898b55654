"""Exception types shared across the package.

The CLI maps these onto exit codes, so error categories stay distinct:
configuration problems, data problems, and numerical failures must not
collapse into a generic ValueError.
"""


class SupportNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SupportNetError, ValueError):
    """Operands have incompatible or malformed dimensions."""


class ParameterError(SupportNetError, ValueError):
    """A scalar argument is outside its legal range."""


class DataFormatError(SupportNetError):
    """A data file is structurally invalid (bad magic, count mismatch)."""


class ScheduleError(SupportNetError, ValueError):
    """A class-batch schedule does not match the dataset it is applied to."""


class StateError(SupportNetError):
    """A consolidation state is inconsistent with the model it regularizes."""


class DegenerateProblemError(SupportNetError, ValueError):
    """An optimization problem has no meaningful solution (e.g. one class)."""


class OracleScopeError(SupportNetError, ValueError):
    """A test oracle was asked to solve a problem beyond its size limits."""


class SelectionError(SupportNetError, ValueError):
    """Support-data selection was asked for a class that is not available."""


class UndefinedStatisticError(SupportNetError, ZeroDivisionError):
    """A statistic is undefined for the given inputs (e.g. kappa at p_e=1)."""


class ConfigError(SupportNetError):
    """A config file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergedError(SupportNetError):
    """Training produced a non-finite loss."""
