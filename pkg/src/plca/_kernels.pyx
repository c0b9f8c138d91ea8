# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled 3x3 convolution kernels (zero padding 1, stride 1 or 2).

Same contract as ``plca._kernels_py``. The patch gather (im2col) and its
adjoint (col2im) are C loops; the channel contraction is a single BLAS matmul.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _out(Py_ssize_t n, Py_ssize_t s) nogil:
    return (n - 1) // s + 1


cdef _im2col(double[:, :, :, ::1] x, int stride, Py_ssize_t Ho, Py_ssize_t Wo):
    # -> (C*9, B*Ho*Wo), zero where the window leaves the image
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cols = np.zeros((C * 9, B * Ho * Wo))
    cdef double[:, ::1] cv = cols
    cdef Py_ssize_t n, c, i, j, y, xx, iy, ix, row, base
    with nogil:
        for c in range(C):
            for i in range(3):
                for j in range(3):
                    row = (c * 3 + i) * 3 + j
                    for n in range(B):
                        base = n * Ho * Wo
                        for y in range(Ho):
                            iy = y * stride + i - 1
                            if iy < 0 or iy >= H:
                                continue
                            for xx in range(Wo):
                                ix = xx * stride + j - 1
                                if 0 <= ix < W:
                                    cv[row, base + y * Wo + xx] = x[n, c, iy, ix]
    return cols


cdef _col2im(double[:, ::1] cols, Py_ssize_t B, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
             int stride, Py_ssize_t Ho, Py_ssize_t Wo):
    dx = np.zeros((B, C, H, W))
    cdef double[:, :, :, ::1] dv = dx
    cdef Py_ssize_t n, c, i, j, y, xx, iy, ix, row, base
    with nogil:
        for n in range(B):
            base = n * Ho * Wo
            for c in range(C):
                for i in range(3):
                    for j in range(3):
                        row = (c * 3 + i) * 3 + j
                        for y in range(Ho):
                            iy = y * stride + i - 1
                            if iy < 0 or iy >= H:
                                continue
                            for xx in range(Wo):
                                ix = xx * stride + j - 1
                                if 0 <= ix < W:
                                    dv[n, c, iy, ix] += cols[row, base + y * Wo + xx]
    return dx


def conv2d_forward(x, w, b, int stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], H = x.shape[2], W = x.shape[3], O = w.shape[0]
    cdef Py_ssize_t Ho = _out(H, stride), Wo = _out(W, stride)
    cols = _im2col(x, stride, Ho, Wo)
    out = np.asarray(w, dtype=np.float64).reshape(O, -1) @ cols  # (O, B*Ho*Wo)
    out += np.asarray(b, dtype=np.float64)[:, None]
    return np.ascontiguousarray(out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3))


def conv2d_backward(x, w, gout, int stride, bint need_dx=True):
    """Return (dx, dw, db); dx is None when ``need_dx`` is false."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], Ho = gout.shape[2], Wo = gout.shape[3]
    g2 = np.ascontiguousarray(np.asarray(gout, dtype=np.float64).transpose(1, 0, 2, 3)).reshape(O, -1)
    cols = _im2col(x, stride, Ho, Wo)
    dw = (g2 @ cols.T).reshape(w.shape)
    db = g2.sum(axis=1)
    dx = None
    if need_dx:
        dcols = np.ascontiguousarray(w.reshape(O, -1).T @ g2)
        dx = _col2im(dcols, B, C, H, W, stride, Ho, Wo)
    return dx, dw, db
