"""Exception and warning types raised across the package."""


class SpilloverError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SpilloverError, ValueError):
    pass


class InvariantViolationError(SpilloverError, ValueError):
    pass


class NumericDegenerateError(SpilloverError, ArithmeticError):
    pass


class InadmissibleParameterError(SpilloverError, ValueError):
    """Parameter point outside the invertibility/stationarity region."""


class OptimizationFailure(SpilloverError, RuntimeError):
    pass


class SelectionFailure(SpilloverError, RuntimeError):
    pass


class SingularInformationError(SpilloverError, ArithmeticError):
    pass


class IngestionError(SpilloverError, ValueError):
    """Malformed input file; the message names the file (and line where known)."""


class ExperimentFailure(SpilloverError, RuntimeError):
    def __init__(self, message, logs=None):
        super().__init__(message)
        self.logs = list(logs or [])


class StageError(SpilloverError, RuntimeError):
    """Failure inside the multi-step pipeline, tagged with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class DiagnosticWarning(UserWarning):
    """Non-fatal numerical or data diagnostic."""
