"""Pure NumPy 3x3 convolution kernels (zero padding 1, stride 1 or 2).

Reference implementation used when the compiled extension is unavailable.
Layouts: input (B, Cin, H, W), weight (Cout, Cin, 3, 3), output (B, Cout, Ho, Wo).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def out_size(n, stride):
    return (n - 1) // stride + 1


def _columns(x, stride):
    # (B, Cin, Ho, Wo, 3, 3) view over the padded input
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride):
    cols = _columns(x, stride)
    out = np.einsum("bchwij,ocij->bohw", cols, w, optimize=True)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, gout, stride, need_dx=True):
    """Return (dx, dw, db); dx is None when ``need_dx`` is false."""
    cols = _columns(x, stride)
    dw = np.einsum("bchwij,bohw->ocij", cols, gout, optimize=True)
    db = gout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        B, _, H, W = x.shape
        Ho, Wo = gout.shape[2], gout.shape[3]
        dcols = np.einsum("bohw,ocij->bcijhw", gout, w, optimize=True)
        dxp = np.zeros((B, x.shape[1], H + 2, W + 2))
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                    j:j + stride * (Wo - 1) + 1:stride] += dcols[:, :, i, j]
        dx = np.ascontiguousarray(dxp[:, :, 1:H + 1, 1:W + 1])
    return dx, dw, db
