"""Backend selection for the hot kernels.

The Cython extension ``sgsm._ckernels`` is preferred. Setting the
environment variable ``SGSM_PURE_PYTHON=1`` (or a failed extension import)
selects the numpy fallback in ``sgsm._pykernels``. ``BACKEND`` names the
active one.
"""
import os

from . import _pykernels

if os.environ.get("SGSM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
haar_forward = _impl.haar_forward
haar_inverse = _impl.haar_inverse
local_extrema = _impl.local_extrema

__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_backward",
    "haar_forward",
    "haar_inverse",
    "local_extrema",
]
