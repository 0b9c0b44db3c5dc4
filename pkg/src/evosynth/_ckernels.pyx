# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for strided 2D convolution.

Both operate on zero-padded NCHW input. Column layout is
``(batch * out_h * out_w, channels * kh * kw)`` with the kernel window
flattened channel-major, matching ``weight.reshape(out_channels, -1)``.
"""
import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int out_h, int out_w):
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    if real is float:
        out = np.empty((n * out_h * out_w, c * kh * kw), dtype=np.float32)
    else:
        out = np.empty((n * out_h * out_w, c * kh * kw), dtype=np.float64)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t b, i, j, ch, p, q, row, col, y0, x0
    with nogil:
        for b in range(n):
            for i in range(out_h):
                y0 = i * stride
                for j in range(out_w):
                    x0 = j * stride
                    row = (b * out_h + i) * out_w + j
                    col = 0
                    for ch in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                cols[row, col] = xp[b, ch, y0 + p, x0 + q]
                                col += 1
    return out


def col2im(real[:, ::1] cols, int n, int c, int hp, int wp,
           int kh, int kw, int stride, int out_h, int out_w):
    if real is float:
        out = np.zeros((n, c, hp, wp), dtype=np.float32)
    else:
        out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef real[:, :, :, ::1] dxp = out
    cdef Py_ssize_t b, i, j, ch, p, q, row, col, y0, x0
    with nogil:
        for b in range(n):
            for i in range(out_h):
                y0 = i * stride
                for j in range(out_w):
                    x0 = j * stride
                    row = (b * out_h + i) * out_w + j
                    col = 0
                    for ch in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                dxp[b, ch, y0 + p, x0 + q] += cols[row, col]
                                col += 1
    return out
