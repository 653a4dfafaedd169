"""TF-Conformer music enhancement: spectral front end, degradation simulator,
generator, training, metrics and the ``tfc`` command line."""

from .errors import (
    AudioFormatError,
    ConfigError,
    DegenerateNoise,
    DegenerateReference,
    DivergedError,
    InvalidInput,
    ShapeError,
    TfcError,
)

__version__ = "0.1.0"
