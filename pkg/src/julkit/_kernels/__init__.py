"""Kernel backend selection.

Two interchangeable lanes implement the convolution and bilinear-sampling
primitives: a compiled Cython extension (``_fast``) and a vectorized numpy
fallback (``numpy_backend``). Both produce identical float64 results; the
compiled lane is simply faster on the small feature maps used here.

The ``JULKIT_BACKEND`` environment variable picks the lane:

* ``auto`` (default): compiled if importable, else numpy.
* ``fast``: compiled, raise if the extension is missing.
* ``numpy``: always the pure-numpy lane.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_choice = os.environ.get("JULKIT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "fast", "numpy"):
    raise ConfigError(f"JULKIT_BACKEND must be auto, fast, or numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = numpy_backend
    BACKEND_NAME = "numpy"
else:
    try:
        from . import _fast as _impl
        BACKEND_NAME = "fast"
    except ImportError:
        if _choice == "fast":
            raise ConfigError(
                "JULKIT_BACKEND=fast but the compiled extension is not built"
            ) from None
        _impl = numpy_backend
        BACKEND_NAME = "numpy"

SNAP_EPS = numpy_backend.SNAP_EPS

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
bilinear_forward = _impl.bilinear_forward
bilinear_backward = _impl.bilinear_backward
