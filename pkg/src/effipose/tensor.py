"""Minimal reverse-mode autograd over dense NCHW numpy arrays.

Only the operations the pose networks need are provided: convolutions
(dense, depthwise, transposed), batch normalisation, the sigmoid/swish
family, pooling, channel concatenation, dropout, elementwise add and
broadcast multiply, and mean-squared-error loss. Each op records a
closure that scatters gradients back to its inputs; ``Tensor.backward``
replays the closures in reverse topological order.

Arrays keep whatever float dtype they come in with (float32 for training,
float64 for numerical gradient checks).
"""

from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Dimension mismatch, carrying the op name and the offending axes."""

    def __init__(self, op, message, axes=()):
        super().__init__(f"{op}: {message}")
        self.op = op
        self.axes = tuple(axes)


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A numpy array plus an optional gradient buffer and backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Backpropagate from this tensor.

        Args:
            seed: gradient of the final objective w.r.t. this tensor;
                defaults to ones (the common case is a scalar loss).
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError("backward", f"seed shape {seed.shape} does not match tensor shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_rank4(op, x, role="input"):
    if x.data.ndim != 4:
        raise ShapeError(op, f"{role} must be rank-4 NCHW, got shape {x.data.shape}")


def _check_mode(op, mode):
    if mode not in ("train", "infer"):
        raise ValueError(f"{op}: mode must be 'train' or 'infer', got {mode!r}")


def same_padding(size, kernel, stride):
    """Total zero padding that keeps output at ceil(size / stride).

    Returns (before, after); when the total is odd the extra pixel goes
    after (bottom / right).
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def conv_output_size(size, kernel, stride, pad_total):
    return (size + pad_total - kernel) // stride + 1


def _resolve_padding(op, padding, h, w, kh, kw, sh, sw):
    if padding == "same":
        pt, pb = same_padding(h, kh, sh)
        pl, pr = same_padding(w, kw, sw)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"{op}: padding must be 'same' or 'valid', got {padding!r}")
    oh = conv_output_size(h, kh, sh, pt + pb)
    ow = conv_output_size(w, kw, sw, pl + pr)
    if oh <= 0 or ow <= 0:
        raise ShapeError(op, f"kernel {kh}x{kw} stride {sh} does not fit input {h}x{w}", axes=("H", "W"))
    return pt, pb, pl, pr, oh, ow


def _pad_nchw(x, pt, pb, pl, pr):
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _crop_nchw(x, pt, pb, pl, pr):
    h, w = x.shape[2], x.shape[3]
    return x[:, :, pt : h - pb or None, pl : w - pr or None]


def conv2d(x, w, b=None, stride=1, padding="same"):
    """2-D convolution (cross-correlation) over NCHW input.

    Args:
        x: input tensor (N, C_in, H, W).
        w: weights (C_out, C_in, kH, kW).
        b: optional bias (C_out,).
        stride: spatial stride, same in both directions.
        padding: 'same' (ceil(size/stride) output) or 'valid'.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check_rank4("conv2d", x)
    _check_rank4("conv2d", w, "weight")
    n, cin, h, wd = x.data.shape
    cout, wcin, kh, kw = w.data.shape
    if wcin != cin:
        raise ShapeError("conv2d", f"weight expects {wcin} input channels, input has {cin}", axes=("C",))
    pt, pb, pl, pr, oh, ow = _resolve_padding("conv2d", padding, h, wd, kh, kw, stride, stride)

    one_by_one = kh == kw == 1 and stride == 1 and (pt | pb | pl | pr) == 0
    xp_shape = (n, cin, h + pt + pb, wd + pl + pr)
    if one_by_one:
        cols = np.ascontiguousarray(x.data).reshape(n, cin, oh * ow)
    else:
        xp = _pad_nchw(x.data, pt, pb, pl, pr)
        cols = kernels.im2col(xp, kh, kw, stride, stride, oh, ow)
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w2, cols).reshape(n, cout, oh, ow)
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (cout,):
            raise ShapeError("conv2d", f"bias shape {b.data.shape} does not match {cout} output channels", axes=("C",))
        out += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(n, cout, oh * ow)
        if w.requires_grad:
            dw = np.einsum("nol,nkl->ok", g2, cols, optimize=True)
            w.accumulate_grad(dw.reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if one_by_one:
                x.accumulate_grad(dcols.reshape(x.data.shape))
            else:
                dxp = kernels.col2im(np.ascontiguousarray(dcols), xp_shape[2], xp_shape[3], kh, kw, stride, stride, oh, ow)
                x.accumulate_grad(_crop_nchw(dxp, pt, pb, pl, pr))

    return _result(out, parents, backward)


def depthwise_conv2d(x, w, stride=1, padding="same"):
    """Depthwise convolution: one k x k filter per channel, no mixing.

    Weights have shape (C, 1, kH, kW). Equivalent to a grouped conv with
    groups == C.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check_rank4("depthwise_conv2d", x)
    _check_rank4("depthwise_conv2d", w, "weight")
    n, c, h, wd = x.data.shape
    wc, one, kh, kw = w.data.shape
    if one != 1:
        raise ShapeError("depthwise_conv2d", f"weight must have a singleton second axis, got {w.data.shape}", axes=("C_in",))
    if wc != c:
        raise ShapeError("depthwise_conv2d", f"weight has {wc} channels, input has {c}", axes=("C",))
    pt, pb, pl, pr, oh, ow = _resolve_padding("depthwise_conv2d", padding, h, wd, kh, kw, stride, stride)

    xp = _pad_nchw(x.data, pt, pb, pl, pr)
    cols = kernels.im2col(xp, kh, kw, stride, stride, oh, ow)
    colsv = cols.reshape(n, c, kh * kw, oh * ow)
    w2 = w.data.reshape(c, kh * kw)
    out = np.einsum("nckl,ck->ncl", colsv, w2, optimize=True).reshape(n, c, oh, ow)

    def backward(g):
        g3 = g.reshape(n, c, oh * ow)
        if w.requires_grad:
            dw = np.einsum("nckl,ncl->ck", colsv, g3, optimize=True)
            w.accumulate_grad(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = w2[None, :, :, None] * g3[:, :, None, :]
            dxp = kernels.col2im(
                np.ascontiguousarray(dcols.reshape(n, c * kh * kw, oh * ow)),
                xp.shape[2], xp.shape[3], kh, kw, stride, stride, oh, ow)
            x.accumulate_grad(_crop_nchw(dxp, pt, pb, pl, pr))

    return _result(out, (x, w), backward)


def conv_transpose2d(x, w, b=None, stride=2, padding=1):
    """Transposed convolution (fractionally strided), NCHW.

    Args:
        x: input (N, C_in, H, W).
        w: weights (C_in, C_out, kH, kW).
        b: optional bias (C_out,).
        stride: upsampling factor.
        padding: symmetric crop applied to the scattered output.

    Output spatial size is (H - 1) * stride + kH - 2 * padding; with the
    4x4 / stride-2 / padding-1 configuration used for map upscaling that
    is exactly 2H.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check_rank4("conv_transpose2d", x)
    _check_rank4("conv_transpose2d", w, "weight")
    n, cin, h, wd = x.data.shape
    wcin, cout, kh, kw = w.data.shape
    if wcin != cin:
        raise ShapeError("conv_transpose2d", f"weight expects {wcin} input channels, input has {cin}", axes=("C",))
    oh = (h - 1) * stride + kh - 2 * padding
    ow = (wd - 1) * stride + kw - 2 * padding
    if oh <= 0 or ow <= 0:
        raise ShapeError("conv_transpose2d", f"output {oh}x{ow} collapsed; check stride/padding", axes=("H", "W"))

    x2 = np.ascontiguousarray(x.data).reshape(n, cin, h * wd)
    w2 = w.data.reshape(cin, cout * kh * kw)
    cols = np.matmul(w2.T, x2)
    full = kernels.col2im(np.ascontiguousarray(cols), oh + 2 * padding, ow + 2 * padding, kh, kw, stride, stride, h, wd)
    out = _crop_nchw(full, padding, padding, padding, padding).copy()
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (cout,):
            raise ShapeError("conv_transpose2d", f"bias shape {b.data.shape} does not match {cout} output channels", axes=("C",))
        out += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gp = _pad_nchw(g, padding, padding, padding, padding)
        gcols = kernels.im2col(gp, kh, kw, stride, stride, h, wd)
        if x.requires_grad:
            dx = np.matmul(w2, gcols)
            x.accumulate_grad(dx.reshape(x.data.shape))
        if w.requires_grad:
            dw = np.einsum("nil,nkl->ik", x2, gcols, optimize=True)
            w.accumulate_grad(dw.reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return _result(out, parents, backward)


def bilinear_upsample_weight(channels, dtype=np.float32):
    """Diagonal 4x4 transposed-conv weight performing 2x bilinear upsampling.

    The separable kernel outer([0.25, 0.75, 0.75, 0.25]) is placed on the
    channel diagonal; cross-channel entries start at zero. Shape
    (channels, channels, 4, 4), matching :func:`conv_transpose2d`.
    """
    line = np.array([0.25, 0.75, 0.75, 0.25], dtype=dtype)
    kern = np.outer(line, line)
    w = np.zeros((channels, channels, 4, 4), dtype=dtype)
    for c in range(channels):
        w[c, c] = kern
    return w


def batch_norm(x, gamma, beta, running_mean, running_var, mode, momentum=0.99, eps=1e-3):
    """Per-channel batch normalisation.

    In train mode the batch statistics (biased variance) normalise the
    input and the running buffers are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``. In infer
    mode the running buffers are used directly.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _check_rank4("batch_norm", x)
    _check_mode("batch_norm", mode)
    c = x.data.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (c,):
            raise ShapeError("batch_norm", f"{name} shape {t.data.shape} does not match {c} channels", axes=("C",))

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * ivar[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if mode == "train":
                m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (ivar[None, :, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
            else:
                dx = dxhat * ivar[None, :, None, None]
            x.accumulate_grad(dx)

    return _result(out, (x, gamma, beta), backward)


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    return _result(s, (x,), backward)


def swish(x):
    """x * sigmoid(x)."""
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)
    out = x.data * s

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (s + x.data * s * (1.0 - s)))

    return _result(out, (x,), backward)


def eswish(x, beta=1.25):
    """beta * x * sigmoid(x); beta = 1 recovers swish."""
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)
    out = beta * x.data * s

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * beta * (s + x.data * s * (1.0 - s)))

    return _result(out, (x,), backward)


def activation(x, kind, beta=1.25):
    """Dispatch by name: 'sigmoid', 'swish' or 'eswish'."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "swish":
        return swish(x)
    if kind == "eswish":
        return eswish(x, beta)
    raise ValueError(f"activation: unknown kind {kind!r}")


def avg_pool(x, window=2, stride=2):
    """Valid average pooling over square windows."""
    x = _as_tensor(x)
    _check_rank4("avg_pool", x)
    n, c, h, w = x.data.shape
    if window > h or window > w:
        raise ShapeError("avg_pool", f"window {window} exceeds input {h}x{w}", axes=("H", "W"))
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    xp = x.data
    cols = kernels.im2col(np.ascontiguousarray(xp), window, window, stride, stride, oh, ow)
    colsv = cols.reshape(n, c, window * window, oh * ow)
    out = colsv.mean(axis=2).reshape(n, c, oh, ow)

    def backward(g):
        if x.requires_grad:
            g3 = g.reshape(n, c, 1, oh * ow) / (window * window)
            dcols = np.broadcast_to(g3, (n, c, window * window, oh * ow))
            dxp = kernels.col2im(
                np.ascontiguousarray(dcols.reshape(n, c * window * window, oh * ow)),
                h, w, window, window, stride, stride, oh, ow)
            x.accumulate_grad(dxp)

    return _result(out, (x,), backward)


def global_avg_pool(x):
    """Mean over the spatial axes, keeping rank 4: (N, C, 1, 1)."""
    x = _as_tensor(x)
    _check_rank4("global_avg_pool", x)
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / (h * w), x.data.shape).copy())

    return _result(out, (x,), backward)


def concat_channels(tensors):
    """Concatenate along the channel axis; all other axes must agree."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat_channels: need at least one tensor")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != 4 or s[0] != ref[0] or s[2:] != ref[2:]:
            raise ShapeError("concat_channels", f"cannot join {ref} with {s}; N/H/W must match", axes=("N", "H", "W"))
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(g[:, lo:hi])

    return _result(out, tuple(tensors), backward)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: train-time scaling by 1/(1-rate), infer is identity."""
    x = _as_tensor(x)
    _check_mode("dropout", mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        def backward_id(g):
            if x.requires_grad:
                x.accumulate_grad(g)
        return _result(x.data.copy(), (x,), backward_id)
    if rng is None:
        raise ValueError("dropout: train mode needs an explicit numpy Generator")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)
    out = x.data * keep * scale

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * keep * scale)

    return _result(out, (x,), backward)


def residual_add(a, b):
    """Elementwise sum of two same-shape maps (skip connections)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError("residual_add", f"shapes {a.data.shape} and {b.data.shape} differ", axes=("N", "C", "H", "W"))
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(out, (a, b), backward)


def broadcast_mul(x, gate):
    """Multiply maps (N, C, H, W) by per-channel gates (N, C, 1, 1)."""
    x, gate = _as_tensor(x), _as_tensor(gate)
    _check_rank4("broadcast_mul", x)
    n, c = x.data.shape[:2]
    if gate.data.shape != (n, c, 1, 1):
        raise ShapeError("broadcast_mul", f"gate shape {gate.data.shape} is not ({n}, {c}, 1, 1)", axes=("N", "C"))
    out = x.data * gate.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * gate.data)
        if gate.requires_grad:
            gate.accumulate_grad((g * x.data).sum(axis=(2, 3), keepdims=True))

    return _result(out, (x, gate), backward)


def mse_loss(preds, targets):
    """Mean squared error over every element of every prediction/target pair.

    Args:
        preds: list of tensors (or a single tensor).
        targets: matching list of arrays or tensors; gradients do not
            flow into targets.

    Returns:
        Scalar tensor: sum of squared differences divided by the total
        element count across all pairs.
    """
    if isinstance(preds, Tensor):
        preds = [preds]
        targets = [targets]
    if len(preds) != len(targets):
        raise ShapeError("mse_loss", f"{len(preds)} predictions vs {len(targets)} targets")
    preds = [_as_tensor(p) for p in preds]
    tdata = []
    for p, t in zip(preds, targets):
        t = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=p.data.dtype)
        if t.shape != p.data.shape:
            raise ShapeError("mse_loss", f"prediction {p.data.shape} vs target {t.shape}", axes=("N", "C", "H", "W"))
        tdata.append(t)
    total = sum(p.data.size for p in preds)
    diffs = [p.data - t for p, t in zip(preds, tdata)]
    value = sum(float(np.sum(d * d)) for d in diffs) / total
    out_dtype = preds[0].data.dtype

    def backward(g):
        for p, d in zip(preds, diffs):
            if p.requires_grad:
                p.accumulate_grad((2.0 / total) * d * g)

    return _result(np.asarray(value, dtype=out_dtype), tuple(preds), backward)
