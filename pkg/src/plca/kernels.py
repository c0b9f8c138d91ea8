"""Convolution kernel backend, chosen once at import.

The compiled extension ``plca._kernels`` is used when it was built; otherwise
the NumPy implementation in ``plca._kernels_py`` is used. Setting the
environment variable ``PLCA_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("PLCA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
out_size = _kernels_py.out_size
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
