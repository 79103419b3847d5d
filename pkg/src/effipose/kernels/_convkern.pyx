# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution patch kernels.

Same contracts as effipose.kernels._numpy; parallelised over the batch axis
only, so results do not depend on the thread split.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
           int out_h, int out_w):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t i, j, a, b, ci, oy, ox, row
    cdef Py_ssize_t l = out_h * out_w

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    cols_arr = np.empty((n, c * kh * kw, l), dtype=dtype)
    cdef floating[:, :, ::1] cols = cols_arr

    for i in prange(n, nogil=True, schedule='static'):
        for ci in range(c):
            for a in range(kh):
                for b in range(kw):
                    row = (ci * kh + a) * kw + b
                    for oy in range(out_h):
                        for ox in range(out_w):
                            cols[i, row, oy * out_w + ox] = x[i, ci, oy * sh + a, ox * sw + b]
    return cols_arr


def col2im(floating[:, :, ::1] cols, int hp, int wp, int kh, int kw,
           int sh, int sw, int out_h, int out_w):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[1] // (kh * kw)
    cdef Py_ssize_t i, a, b, ci, oy, ox, row

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr

    for i in prange(n, nogil=True, schedule='static'):
        for ci in range(c):
            for a in range(kh):
                for b in range(kw):
                    row = (ci * kh + a) * kw + b
                    for oy in range(out_h):
                        for ox in range(out_w):
                            out[i, ci, oy * sh + a, ox * sw + b] = (
                                out[i, ci, oy * sh + a, ox * sw + b]
                                + cols[i, row, oy * out_w + ox])
    return out_arr
