"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so the hierarchy mirrors the
failure surfaces: audio input format, weight files, and runtime numerics.
"""


class TscnppError(Exception):
    """Base class for all package-specific errors."""


class WavFormatError(TscnppError):
    """Input WAV file cannot be used (exit code 3)."""


class WavHeaderError(WavFormatError):
    """Malformed RIFF/WAVE container."""


class WavRateError(WavFormatError):
    """Sample rate is not 16 kHz."""


class WavChannelsError(WavFormatError):
    """Audio is not mono."""


class WavBitDepthError(WavFormatError):
    """Samples are not 16-bit PCM."""


class WeightFileError(TscnppError):
    """Weight file cannot be used (exit code 4)."""


class WeightMagicError(WeightFileError):
    """File does not start with the expected magic bytes."""


class WeightCorruptError(WeightFileError):
    """Truncated payload, unparsable header, or checksum mismatch."""


class WeightShapeError(WeightFileError):
    """Stored tensor set does not match the model's declared shapes."""


class NumericalError(TscnppError):
    """Non-finite value produced while processing (exit code 5)."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class DivergenceError(TscnppError):
    """Optimization produced a non-finite loss."""
