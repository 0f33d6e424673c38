"""Exception hierarchy shared by every module of the package."""


class FegutError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FegutError, ValueError):
    """Invalid scenario, trajectory or estimator configuration."""


class TimeRangeError(FegutError, ValueError):
    """A requested time lies outside the span of the available data."""


class SingularGeometryError(FegutError, ArithmeticError):
    """A range model was evaluated at (or extremely near) its singular point."""


class NumericalError(FegutError, ArithmeticError):
    """A linear system could not be solved or produced non-finite values."""


class RankDeficiencyError(NumericalError):
    """Normal equations are singular; ``columns`` lists the offending variables."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ContractViolation(FegutError, RuntimeError):
    """An operation was called in a state where its precondition does not hold."""


class ColdStartError(FegutError, RuntimeError):
    """The first epoch cannot produce a standalone GNSS fix."""


class DatasetParseError(FegutError, ValueError):
    """A dataset or CSV file is malformed. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
