"""Exception hierarchy and process exit codes for the toolkit."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class IdcaeError(Exception):
    """Base class for all toolkit errors."""


class UsageError(IdcaeError):
    """API or CLI misuse; maps to exit code 1."""


class ShapeError(UsageError):
    """Tensor or matrix dimensions do not match an operation's contract."""


class DataError(IdcaeError):
    """Invalid input data or files; maps to exit code 2."""


class NumericError(IdcaeError):
    """NaN/Inf or other numeric failure during compute; maps to exit code 3."""


class WavFormatError(DataError):
    """WAV file is malformed or not a RIFF/WAVE stream."""


class UnsupportedWavError(DataError):
    """WAV encoding other than PCM16 / IEEE float32."""


class ManifestError(DataError):
    """Manifest file failed validation; message carries the line number."""


class InputTooShortError(DataError):
    """Signal or spectrogram shorter than one analysis window."""


class ValidationError(DataError):
    """Inconsistent inputs (labels, vocabularies, scaler/model mismatch)."""


class MetricUndefinedError(DataError):
    """ROC metric requested on a single-class score table."""


class ModelLoadError(DataError):
    """Model container could not be loaded."""


class ModelVersionError(ModelLoadError):
    """Container magic/version line does not match this toolkit."""


class ModelChecksumError(ModelLoadError):
    """Container payload checksum mismatch (corruption)."""


class ModelTruncatedError(ModelLoadError):
    """Container ends before the declared payload/checksum."""
