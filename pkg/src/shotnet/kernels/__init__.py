"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly. Setting the
environment variable ``SHOTNET_PURE_NUMPY=1`` before import forces the
pure-numpy backend. Both modules stay importable directly
(``shotnet.kernels._numpy`` / ``shotnet.kernels._numba``) for tests and
benchmarks.
"""
import os

from . import _numpy

_FORCE_NUMPY = os.environ.get("SHOTNET_PURE_NUMPY", "").strip().lower() in ("1", "true", "yes", "on")

_impl = _numpy
BACKEND = "numpy"
if not _FORCE_NUMPY:
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba missing
        pass
    else:
        _impl = _numba
        BACKEND = "numba"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
rgb_histogram = _impl.rgb_histogram

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "conv1d_forward",
    "conv1d_backward",
    "rgb_histogram",
]
