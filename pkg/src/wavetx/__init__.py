"""wavetx: wavelet-subband adversarial attacks on small CNN classifiers."""

__version__ = "0.1.0"

from .autodiff import Tensor, no_grad
from .errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    InvalidShapeError,
    NumericError,
    StateError,
    WavetxError,
)
from .wavelet import SubbandSet, WaveletFilter, dwt2, filter_bank, idwt2

__all__ = [
    "Tensor",
    "no_grad",
    "WavetxError",
    "InvalidShapeError",
    "InvalidArgumentError",
    "StateError",
    "FormatError",
    "ConfigError",
    "NumericError",
    "SubbandSet",
    "WaveletFilter",
    "filter_bank",
    "dwt2",
    "idwt2",
    "__version__",
]
