"""Exception types shared across the package."""


class TfcError(Exception):
    """Base class for all package errors."""


class InvalidInput(TfcError, ValueError):
    pass


class ShapeError(TfcError, ValueError):
    pass


class ConfigError(TfcError, ValueError):
    pass


class DegenerateNoise(TfcError, ValueError):
    pass


class DegenerateReference(TfcError, ValueError):
    pass


class AudioFormatError(TfcError, ValueError):
    """Raised when a WAV file is not 16-bit PCM mono at 16 kHz."""


class DivergedError(TfcError, RuntimeError):
    """Raised when training produces a non-finite loss.

    The ``snapshot`` attribute carries the model/optimizer state captured
    right before the failing step.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
