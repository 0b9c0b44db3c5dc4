"""Backend selection for the convolution kernels.

The compiled Cython module is preferred. Setting ``EVOSYNTH_PURE_PYTHON=1``
forces the numpy fallback, which is also used when the extension was not built.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("EVOSYNTH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"
else:
    _impl = _pykernels


def available_backends():
    try:
        from . import _ckernels
    except ImportError:
        return ["python"]
    return ["cython", "python"]


def get_backend(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def im2col(xp, kh, kw, stride, out_h, out_w):
    return _impl.im2col(xp, kh, kw, stride, out_h, out_w)


def col2im(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w):
    return _impl.col2im(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w)
