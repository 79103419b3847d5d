"""Pure numpy implementations of the convolution patch kernels.

These mirror the compiled Cython kernels exactly; the backend is chosen in
``effipose.kernels``. Patch extraction uses a strided view followed by a
reshape copy, scatter-add walks the kernel taps so each slice assignment
touches disjoint output positions.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x, kh, kw, sh, sw, out_h, out_w):
    """Extract sliding patches from a padded NCHW array.

    Args:
        x: padded input, shape (N, C, Hp, Wp).
        kh, kw: kernel height and width.
        sh, sw: strides.
        out_h, out_w: number of vertical / horizontal kernel placements.

    Returns:
        Array of shape (N, C*kh*kw, out_h*out_w); the middle axis is
        row-major over (channel, tap row, tap col).
    """
    x = np.ascontiguousarray(x)
    n, c, _, _ = x.shape
    s0, s1, s2, s3 = x.strides
    windows = as_strided(
        x,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * sh, s3 * sw),
    )
    return windows.reshape(n, c * kh * kw, out_h * out_w)


def col2im(cols, hp, wp, kh, kw, sh, sw, out_h, out_w):
    """Scatter-add patch columns back onto a padded NCHW grid.

    Adjoint of :func:`im2col`: positions covered by several kernel taps
    accumulate all contributions.
    """
    n = cols.shape[0]
    c = cols.shape[1] // (kh * kw)
    c6 = cols.reshape(n, c, kh, kw, out_h, out_w)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + sh * out_h : sh, b : b + sw * out_w : sw] += c6[:, :, a, b]
    return out
