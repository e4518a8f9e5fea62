"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, runtime failures
exit 2, data/file-format problems exit 3.
"""


class TaskpackError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(TaskpackError):
    """An array does not match the architecture at a named layer."""


class EmptyBatchError(TaskpackError):
    """Forward called with zero samples."""


class EvalCacheError(TaskpackError):
    """Backward called on a cache produced by an eval-mode forward."""


class NonFiniteLossError(TaskpackError):
    """Loss or network outputs contain NaN/Inf; carries layer diagnostics."""


class MaskConsistencyError(TaskpackError):
    """A weight mask selects a weight whose endpoint neuron is inactive."""


class DuplicateTaskError(TaskpackError):
    """commit_task called with an already-used task id."""


class UnknownTaskError(TaskpackError):
    """Inference requested for a task id that was never committed."""


class InfeasibleTargetError(TaskpackError):
    """A pruning target cannot be met without emptying a hidden layer."""


class DataError(TaskpackError):
    """Base class for dataset/file-format problems (CLI exit code 3)."""


class IdxFormatError(DataError):
    """Base class for IDX container problems."""


class IdxMagicError(IdxFormatError):
    """IDX file starts with the wrong magic number."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than the header promises."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the sample count."""


class CheckpointError(TaskpackError):
    """Base class for checkpoint container problems."""


class CheckpointMagicError(CheckpointError):
    """Checkpoint file does not start with the container magic."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint container version is not supported."""


class SectionLengthError(CheckpointError):
    """A checkpoint section's byte length disagrees with its header entry."""
