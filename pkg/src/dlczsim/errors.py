"""Exception types shared across the simulator."""


class DlczError(Exception):
    """Base class for all simulator errors."""


class InvalidParameterError(DlczError, ValueError):
    """A model parameter violates its documented range."""


class TimeOrderError(DlczError, ValueError):
    """An operation was asked to evaluate before its reference time."""


class EmptyEnsembleError(DlczError, ValueError):
    """An ensemble-level operation received no atoms."""


class NoRootInWindowError(DlczError, ValueError):
    """The gradient area does not change sign inside the search window."""


class EmptyStreamError(DlczError, ValueError):
    """An accumulator received zero trials."""


class InsufficientStatisticsError(DlczError, ValueError):
    """A ratio estimator has a zero denominator count."""


class RegionError(DlczError, ValueError):
    """A named analysis region contains no samples."""


class SimulationBudgetError(DlczError, RuntimeError):
    """The trial budget was exhausted before reaching the target counts."""


class ConfigError(DlczError, ValueError):
    """Configuration file is malformed or inconsistent.

    Carries the offending field and, when known, the line number.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)


class MalformedLineError(DlczError, ValueError):
    """A data file contains an unparseable record."""

    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CalibrationError(DlczError, RuntimeError):
    """Calibration failed to converge; carries the best-so-far report."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)
