"""Kernel backend selection.

Prefers the compiled extension when it imported cleanly, otherwise falls
back to the NumPy implementation. WAVETX_BACKEND=compiled|numpy overrides
the choice; asking for the compiled backend when it is unavailable is an
error rather than a silent downgrade.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

try:
    from . import _core
except ImportError:
    _core = None

_requested = os.environ.get("WAVETX_BACKEND", "").strip().lower()
if _requested == "compiled":
    if _core is None:
        raise ConfigError("WAVETX_BACKEND=compiled but the extension is not built")
    _impl = _core
    BACKEND = "compiled"
elif _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
elif _requested == "":
    _impl = _core if _core is not None else numpy_backend
    BACKEND = "compiled" if _core is not None else "numpy"
else:
    raise ConfigError(f"unknown WAVETX_BACKEND value: {_requested!r}")

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_params = _impl.conv2d_backward_params
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
