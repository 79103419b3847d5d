"""Convolution patch kernels with a compiled fast path.

Two interchangeable backends provide ``im2col``/``col2im``: a Cython
extension and a pure numpy fallback. Selection happens once at import,
overridable through ``EFFIPOSE_KERNELS`` (``auto``, ``cython`` or
``python``). Both backends are bit-compatible for float32 and float64.
"""

import os

from . import _numpy


def _load_backend():
    choice = os.environ.get("EFFIPOSE_KERNELS", "auto").lower()
    if choice not in ("auto", "cython", "python"):
        raise ValueError(
            f"EFFIPOSE_KERNELS must be auto, cython or python, got {choice!r}")
    if choice == "python":
        return _numpy, "python"
    try:
        from . import _convkern
        return _convkern, "cython"
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "EFFIPOSE_KERNELS=cython but the compiled extension is not "
                "available; reinstall with a C compiler or use python")
        return _numpy, "python"


_impl, _name = _load_backend()


def backend_name():
    """Name of the active backend: 'cython' or 'python'."""
    return _name


def get_backend(name):
    """Return a specific backend module, independent of the active one."""
    if name == "python":
        return _numpy
    if name == "cython":
        from . import _convkern
        return _convkern
    raise ValueError(f"unknown kernel backend {name!r}")


def im2col(x, kh, kw, sh, sw, out_h, out_w):
    return _impl.im2col(x, kh, kw, sh, sw, out_h, out_w)


def col2im(cols, hp, wp, kh, kw, sh, sw, out_h, out_w):
    return _impl.col2im(cols, hp, wp, kh, kw, sh, sw, out_h, out_w)
