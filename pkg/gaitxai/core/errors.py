"""
Error taxonomy shared by the ingest, engine, explanation, statistics and CLI layers
"""

from enum import Enum
from typing import Dict, Optional


class ErrorType(str, Enum):
    """Classification of error types, one per failure the pipeline can surface"""
    SCHEMA_ERROR = "SchemaError"
    LENGTH_MISMATCH = "LengthMismatch"
    LABEL_CONFLICT = "LabelConflict"
    NON_FINITE_VALUE = "NonFiniteValue"
    TOO_FEW_SUBJECTS = "TooFewSubjects"
    SHAPE_MISMATCH = "ShapeMismatch"
    DEGENERATE_SPLIT = "DegenerateSplit"
    EMPTY_GROUP = "EmptyGroup"
    GROUP_TOO_SMALL = "GroupTooSmall"
    DEGENERATE_RESIDUALS = "DegenerateResiduals"
    NO_SOLUTION = "NoSolution"
    EMPTY_DATASET = "EmptyDataset"
    ZERO_CURVE = "ZeroCurve"
    CHECKPOINT_MISMATCH = "CheckpointMismatch"
    MISSING_INPUT = "MissingInput"
    DATA_NOT_FOUND = "DataNotFound"
    CONFIG_ERROR = "ConfigError"
    BAD_FLAG = "BadFlag"
    IO_ERROR = "IoError"
    UNEXPECTED = "Unexpected"


class ExitCode(int, Enum):
    """Process exit codes used by the command-line entry point"""
    SUCCESS = 0
    UNEXPECTED = 1
    INPUT_MISSING = 2
    PRECONDITION = 3
    CONFIG = 4


EXIT_CODES: Dict[ErrorType, ExitCode] = {
    ErrorType.DATA_NOT_FOUND: ExitCode.INPUT_MISSING,
    ErrorType.MISSING_INPUT: ExitCode.INPUT_MISSING,
    ErrorType.IO_ERROR: ExitCode.INPUT_MISSING,
    ErrorType.CHECKPOINT_MISMATCH: ExitCode.INPUT_MISSING,
    ErrorType.CONFIG_ERROR: ExitCode.CONFIG,
    ErrorType.BAD_FLAG: ExitCode.CONFIG,
    ErrorType.UNEXPECTED: ExitCode.UNEXPECTED,
}


class GaitXaiError(Exception):
    """Base class of every error raised by the package"""

    error_type: ErrorType = ErrorType.UNEXPECTED

    def __init__(self, message: str, context: Optional[Dict[str, object]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    @property
    def exit_code(self) -> ExitCode:
        # Anything not listed is a violated precondition on otherwise valid input
        return EXIT_CODES.get(self.error_type, ExitCode.PRECONDITION)


class SchemaError(GaitXaiError):
    error_type = ErrorType.SCHEMA_ERROR


class LengthMismatch(GaitXaiError):
    error_type = ErrorType.LENGTH_MISMATCH


class LabelConflict(GaitXaiError):
    error_type = ErrorType.LABEL_CONFLICT


class NonFiniteValue(GaitXaiError):
    error_type = ErrorType.NON_FINITE_VALUE


class TooFewSubjects(GaitXaiError):
    error_type = ErrorType.TOO_FEW_SUBJECTS


class ShapeMismatch(GaitXaiError):
    error_type = ErrorType.SHAPE_MISMATCH


class DegenerateSplit(GaitXaiError):
    error_type = ErrorType.DEGENERATE_SPLIT


class EmptyGroup(GaitXaiError):
    error_type = ErrorType.EMPTY_GROUP


class GroupTooSmall(GaitXaiError):
    error_type = ErrorType.GROUP_TOO_SMALL


class DegenerateResiduals(GaitXaiError):
    error_type = ErrorType.DEGENERATE_RESIDUALS


class NoSolution(GaitXaiError):
    error_type = ErrorType.NO_SOLUTION


class EmptyDataset(GaitXaiError):
    error_type = ErrorType.EMPTY_DATASET


class ZeroCurve(GaitXaiError):
    error_type = ErrorType.ZERO_CURVE


class CheckpointMismatch(GaitXaiError):
    error_type = ErrorType.CHECKPOINT_MISMATCH


class MissingInput(GaitXaiError):
    error_type = ErrorType.MISSING_INPUT


class DataNotFound(GaitXaiError):
    error_type = ErrorType.DATA_NOT_FOUND


class ConfigError(GaitXaiError):
    error_type = ErrorType.CONFIG_ERROR


class BadFlag(GaitXaiError):
    error_type = ErrorType.BAD_FLAG


class IoError(GaitXaiError):
    error_type = ErrorType.IO_ERROR


def format_error_line(exc: BaseException) -> str:
    """Render the single machine-parseable line printed on failure"""
    if isinstance(exc, GaitXaiError):
        name = exc.error_type.value
        message = exc.message
    else:
        name = ErrorType.UNEXPECTED.value
        message = f"{type(exc).__name__}: {exc}"
    # Keep it on one line no matter what the message contains
    message = " ".join(str(message).split())
    return f"{name}: {message}"


def exit_code_for(exc: BaseException) -> ExitCode:
    if isinstance(exc, GaitXaiError):
        return exc.exit_code
    return ExitCode.UNEXPECTED
