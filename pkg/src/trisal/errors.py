"""Exception types shared across the package."""


class TrisalError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TrisalError):
    """Invalid or inconsistent configuration."""


class ShapeError(TrisalError):
    """Tensor or image shape violates an operation's contract."""


class LevelError(TrisalError):
    """Pyramid level outside the range an operation supports."""


class MissingModality(TrisalError):
    """A frame is missing one of its modality files."""


class AlignmentError(TrisalError):
    """Modalities of one frame disagree on resolution."""


class SplitError(TrisalError):
    """Train and test splits overlap."""


class ManifestError(TrisalError):
    """Split manifest fails validation."""


class EmptyDataset(TrisalError):
    """No usable ground-truth masks in the dataset."""


class EmptyGroundTruth(TrisalError):
    """Ground-truth mask contains no foreground pixels."""


class PairingError(TrisalError):
    """Prediction and ground-truth frame sets do not match."""


class AttributeFileError(TrisalError):
    """Sequence attribute file fails validation."""


class InputError(TrisalError):
    """A required model input is missing."""


class TrainingDiverged(TrisalError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
