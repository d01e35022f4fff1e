"""Exception hierarchy shared across the toolkit.

Everything raised on purpose derives from ToolkitError so the CLI can map
user/validation problems to exit code 1 and genuine bugs to exit code 2.
"""


class ToolkitError(Exception):
    """Base class for all anticipated failures."""


class UnsupportedFormatError(ToolkitError):
    """Audio file is not 48 kHz stereo PCM 16/24-bit WAV."""


class IoFailureError(ToolkitError):
    """File could not be read or written."""


class InputTooShortError(ToolkitError):
    """Signal shorter than one analysis frame."""


class TargetTooSmallError(ToolkitError):
    """Requested pad length below the current sample count."""


class LengthMismatchError(ToolkitError):
    """Reference and coded signals have different lengths."""


class ShapeMismatchError(ToolkitError):
    """Array shape incompatible with the model or batch."""


class ConfigError(ToolkitError):
    """Bad configuration value or malformed config/CLI input."""


class NonpositiveScaleError(ToolkitError):
    """Scale parameter must be strictly positive."""


class InvalidDofError(ToolkitError):
    """Degrees of freedom must be a positive integer."""


class InsufficientListenersError(ToolkitError):
    """Confidence intervals need at least two listeners."""


class TooFewScoresError(ToolkitError):
    """Listener score statistics need at least two scores."""


class OutOfRangeScoreError(ToolkitError):
    """MUSHRA score outside the 0..100 scale."""


class BatchTooSmallError(ToolkitError):
    """Mixing augmentation needs at least two samples."""


class DegenerateInputError(ToolkitError):
    """Correlation is undefined for constant input."""


class MissingCiError(ToolkitError):
    """Condition lacks the confidence interval the metric needs."""


class IdMismatchError(ToolkitError):
    """Prediction and subjective condition ids do not line up."""


class ManifestError(ToolkitError):
    """Malformed manifest row; message carries the line number."""


class MissingFileError(ToolkitError):
    """Audio or cache file referenced but absent on disk."""


class DuplicateRecordError(ManifestError):
    """Same (excerpt, condition, listener) rated twice."""


class TooFewExcerptsError(ToolkitError):
    """Dataset smaller than the number of cross-validation folds."""


class TrainingDivergedError(ToolkitError):
    """Loss became non-finite during optimization."""


class CheckpointError(ToolkitError):
    """Checkpoint file is corrupt or from an incompatible version."""
