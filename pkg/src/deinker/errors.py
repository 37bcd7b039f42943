"""Exception hierarchy shared across the package.

Every error the pipeline raises deliberately derives from DeinkerError so the
CLI can map domain failures to exit code 1 while genuine bugs still surface
as tracebacks.
"""


class DeinkerError(Exception):
    """Base class for all domain errors."""


class FormatError(DeinkerError):
    """Unsupported or corrupt file content."""


class BoundsError(DeinkerError):
    """A rectangle or coordinate falls outside an image."""


class GeometryError(DeinkerError):
    """Dimensions of two inputs are incompatible."""


class AlignmentError(DeinkerError):
    """Masks or overlays do not belong to the same slide/geometry."""


class ShapeError(DeinkerError):
    """Tensor shape incompatible with a network or operation."""


class ConfigError(DeinkerError):
    """Invalid configuration value or malformed spec."""


class InputError(DeinkerError):
    """Caller supplied empty or insufficient inputs."""


class DataError(DeinkerError):
    """Training/evaluation data unusable (empty pool, single class, ...)."""


class SamplingExhaustedError(DeinkerError):
    """Rejection sampling could not fill a quota."""

    def __init__(self, label: str, message: str | None = None):
        self.label = label
        super().__init__(message or f"sampling exhausted for label {label!r}")


class CheckpointError(DeinkerError):
    """Checkpoint missing, incompatible, or version-mismatched."""


class TrainingAborted(DeinkerError):
    """Training stopped on a non-finite loss; a diagnostic checkpoint was written."""


class UndefinedCorrelationError(DeinkerError):
    """Pearson correlation undefined because one input is constant."""


class ReportError(DeinkerError):
    """Evaluation report violates its schema or internal invariants."""


class NotFoundError(DeinkerError):
    """Requested session or item does not exist."""


class ConflictError(DeinkerError):
    """Attempt to overwrite an already-recorded answer."""


class IncompleteSessionError(DeinkerError):
    """Report requested before every item was answered."""
