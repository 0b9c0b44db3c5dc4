"""Pure numpy im2col / col2im, used when the compiled kernels are unavailable."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, out_h, out_w):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
    # (n, c, oh, ow, kh, kw) -> (n, oh, ow, c, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * out_h * out_w, c * kh * kw
    )


def col2im(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w):
    dxp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for p in range(kh):
        for q in range(kw):
            dxp[:, :, p : p + stride * out_h : stride, q : q + stride * out_w : stride] += blocks[
                :, :, p, q
            ]
    return dxp
