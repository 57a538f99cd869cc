"""Exception hierarchy for the rain package.

Every error carries the process exit code the CLI returns for it.
"""

from .utils.constants import ExitCode


class RainError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = ExitCode.NUMERICAL_FAILURE


class UsageError(RainError):
    exit_code = ExitCode.USAGE


class ContractViolation(RainError, ValueError):
    """A shape or precondition of an operation does not hold."""

    exit_code = ExitCode.USAGE


class DatasetIOError(RainError):
    exit_code = ExitCode.IO


class DatasetFormatError(RainError):
    exit_code = ExitCode.IO


class CheckpointFormatError(RainError):
    exit_code = ExitCode.IO


class MissingPrerequisiteError(RainError):
    exit_code = ExitCode.MISSING_PREREQUISITE


class NumericalFailureError(RainError):
    exit_code = ExitCode.NUMERICAL_FAILURE


class DegenerateGeometryError(NumericalFailureError):
    """Two particles share a position, so the pair force is undefined."""


class NumericalBlowUpError(NumericalFailureError):
    """A simulated state component exceeded the overflow bound."""


class TrainingDivergedError(NumericalFailureError):
    """A training loss became non-finite."""


class RolloutAbortedError(RainError):
    """The generator failed inside an RL rollout; no transitions were kept."""

    exit_code = ExitCode.NUMERICAL_FAILURE
