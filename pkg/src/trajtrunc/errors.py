"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes (2 for parameter problems,
3 for data or contract violations).
"""


class TrajTruncError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(TrajTruncError, ValueError):
    exit_code = 2


class StepRangeError(ParameterError, IndexError):
    """A step index fell outside 1..T (or 0..T where allowed)."""


class DataError(TrajTruncError, ValueError):
    exit_code = 3


class ContractError(TrajTruncError):
    """An operation's precondition on its inputs does not hold."""

    exit_code = 3


class StageError(TrajTruncError):
    """Wraps an error raised inside one stage of the benchmark pipeline."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
