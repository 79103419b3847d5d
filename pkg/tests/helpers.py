"""Shared test utilities: finite-difference gradient checks and naive
convolution references that the fast implementations are judged against."""

import numpy as np

from effipose.tensor import Tensor, same_padding

GRAD_TOL = 1e-4
FD_EPS = 1e-5


def leaf(rng, *shape, scale=1.0):
    """Float64 leaf tensor with gradients enabled."""
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b)) / (np.max(np.abs(a)) + np.max(np.abs(b)) + 1e-12)


def gradcheck(fn, tensors, rng, eps=FD_EPS):
    """Worst relative error between backprop and central differences.

    The output is contracted with a fixed random projection so the check
    covers non-scalar outputs with a single backward pass.
    """
    out = fn(*tensors)
    proj = rng.standard_normal(out.data.shape)

    for t in tensors:
        t.zero_grad()
    fn(*tensors).backward(proj)
    analytic = [np.array(t.grad, copy=True) for t in tensors]

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        gn = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = gn.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.sum(fn(*tensors).data * proj))
            flat[i] = orig - eps
            lo = float(np.sum(fn(*tensors).data * proj))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        worst = max(worst, rel_error(ga, gn))
    return worst


def pad_same(x, kh, kw, sh, sw):
    """Apply asymmetric same padding (extra pixel after) to an NCHW array."""
    h, w = x.shape[2], x.shape[3]
    top, bottom = same_padding(h, kh, sh)
    left, right = same_padding(w, kw, sw)
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))


def naive_conv2d(x, w, b=None, stride=1):
    """Six-loop dense convolution with same padding, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = pad_same(x, kh, kw, stride, stride)
    oh = -(-h // stride)
    ow = -(-wd // stride)
    out = np.zeros((n, cout, oh, ow))
    for img in range(n):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[img, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[img, o, i, j] = np.sum(patch * w[o])
    if b is not None:
        out += np.asarray(b, dtype=np.float64)[None, :, None, None]
    return out


def naive_depthwise(x, w, stride=1):
    """Per-channel convolution with same padding, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).reshape(w.shape[0], w.shape[-2], w.shape[-1])
    n, c, h, wd = x.shape
    _, kh, kw = w.shape
    xp = pad_same(x, kh, kw, stride, stride)
    oh = -(-h // stride)
    ow = -(-wd // stride)
    out = np.zeros((n, c, oh, ow))
    for img in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[img, ch, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[img, ch, i, j] = np.sum(patch * w[ch])
    return out


def naive_conv_transpose2d(x, w, b=None, stride=2, padding=1):
    """Scatter-based transposed convolution, float64.

    Every input cell adds its kernel-weighted footprint into the padded
    output canvas; the padding ring is cropped at the end.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    full_h = (h - 1) * stride + kh
    full_w = (wd - 1) * stride + kw
    canvas = np.zeros((n, cout, full_h, full_w))
    for img in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    canvas[img, :, i * stride:i * stride + kh, j * stride:j * stride + kw] += (
                        x[img, ci, i, j] * w[ci])
    out = canvas[:, :, padding:full_h - padding, padding:full_w - padding]
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)[None, :, None, None]
    return out


def bilinear_resize_x2(image):
    """Half-pixel-center bilinear upsampling of an (C, H, W) array by 2.

    Samples outside the source are edge-clamped, matching what a
    stride-2 transposed convolution with a bilinear kernel produces in
    the interior of the map.
    """
    c, h, w = image.shape
    oh, ow = 2 * h, 2 * w
    ys = (np.arange(oh) + 0.5) / 2 - 0.5
    xs = (np.arange(ow) + 0.5) / 2 - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    tl = image[:, y0][:, :, x0]
    tr = image[:, y0][:, :, x1]
    bl = image[:, y1][:, :, x0]
    br = image[:, y1][:, :, x1]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def op_battery(rng):
    """Named differentiable cases: (name, fn, leaf tensors).

    Shapes are drawn small and at random so repeated runs cover odd/even
    sizes and the asymmetric-padding branches.
    """
    from effipose import tensor as T

    def dims(lo=4, hi=9):
        return int(rng.integers(lo, hi + 1))

    cases = []

    def add(name, fn, *tensors):
        cases.append((name, fn, list(tensors)))

    for kernel, stride in ((3, 1), (3, 2), (5, 2), (1, 1), (1, 2)):
        n, cin, cout = dims(1, 2), dims(2, 4), dims(2, 4)
        x = leaf(rng, n, cin, dims(5, 8), dims(5, 9))
        w = leaf(rng, cout, cin, kernel, kernel, scale=0.5)
        b = leaf(rng, cout)
        add(f"conv2d_k{kernel}_s{stride}",
            lambda x, w, b, s=stride: T.conv2d(x, w, b, stride=s), x, w, b)

    for kernel, stride in ((3, 1), (3, 2), (5, 1)):
        n, c = dims(1, 2), dims(2, 4)
        x = leaf(rng, n, c, dims(5, 8), dims(5, 9))
        w = leaf(rng, c, 1, kernel, kernel, scale=0.5)
        add(f"depthwise_k{kernel}_s{stride}",
            lambda x, w, s=stride: T.depthwise_conv2d(x, w, stride=s), x, w)

    n, cin, cout = dims(1, 2), dims(2, 3), dims(2, 3)
    x = leaf(rng, n, cin, dims(4, 6), dims(4, 6))
    w = leaf(rng, cin, cout, 4, 4, scale=0.5)
    b = leaf(rng, cout)
    add("conv_transpose2d_k4_s2", lambda x, w, b: T.conv_transpose2d(x, w, b), x, w, b)

    n, c = 2, dims(2, 4)
    x = leaf(rng, n, c, dims(4, 6), dims(4, 6))
    gamma, beta = leaf(rng, c), leaf(rng, c)
    rm = np.zeros(c)
    rv = np.ones(c)
    add("batch_norm_train",
        lambda x, g, bt: T.batch_norm(x, g, bt, rm, rv, "train"), x, gamma, beta)

    for kind in ("sigmoid", "swish", "eswish"):
        x = leaf(rng, dims(1, 2), dims(2, 4), dims(4, 7), dims(4, 7), scale=2.0)
        add(kind, lambda x, k=kind: T.activation(x, k), x)

    x = leaf(rng, dims(1, 2), dims(2, 4), 2 * dims(2, 4), 2 * dims(2, 4))
    add("avg_pool", lambda x: T.avg_pool(x), x)

    x = leaf(rng, dims(1, 2), dims(2, 5), dims(3, 7), dims(3, 7))
    add("global_avg_pool", T.global_avg_pool, x)

    h, wd = dims(4, 7), dims(4, 7)
    parts = [leaf(rng, 2, dims(1, 3), h, wd) for _ in range(3)]
    add("concat_channels", lambda *ts: T.concat_channels(list(ts)), *parts)

    shape = (dims(1, 2), dims(2, 4), dims(4, 7), dims(4, 7))
    add("residual_add", T.residual_add, leaf(rng, *shape), leaf(rng, *shape))

    n, c, h, wd = dims(1, 2), dims(2, 4), dims(4, 7), dims(4, 7)
    add("broadcast_mul", T.broadcast_mul, leaf(rng, n, c, h, wd), leaf(rng, n, c, 1, 1))

    x = leaf(rng, 2, 3, dims(4, 6), dims(4, 6))
    mask_seed = int(rng.integers(0, 2**31))
    add("dropout_train",
        lambda x: T.dropout(x, 0.4, "train", np.random.default_rng(mask_seed)), x)

    a = leaf(rng, 2, 3, 4, 5)
    b2 = leaf(rng, 2, 2, 3, 3)
    ta = rng.standard_normal(a.data.shape)
    tb = rng.standard_normal(b2.data.shape)
    add("mse_loss_two_heads", lambda a, b: T.mse_loss([a, b], [ta, tb]), a, b2)

    x = leaf(rng, 2, 3, 6, 6)
    w1 = leaf(rng, 4, 3, 3, 3, scale=0.5)
    g1, bt1 = leaf(rng, 4), leaf(rng, 4)
    rm1, rv1 = np.zeros(4), np.ones(4)
    add("conv_bn_swish_pool_chain",
        lambda x, w, g, bt: T.avg_pool(T.swish(T.batch_norm(T.conv2d(x, w, stride=1), g, bt, rm1, rv1, "train"))),
        x, w1, g1, bt1)

    x = leaf(rng, 2, 4, 5, 5)
    wr = leaf(rng, 2, 4, 1, 1, scale=0.5)
    br = leaf(rng, 2)
    we = leaf(rng, 4, 2, 1, 1, scale=0.5)
    be = leaf(rng, 4)
    def se_gate(x, wr, br, we, be):
        squeezed = T.global_avg_pool(x)
        gate = T.sigmoid(T.conv2d(T.swish(T.conv2d(squeezed, wr, br)), we, be))
        return T.broadcast_mul(x, gate)
    add("squeeze_excite_gate", se_gate, x, wr, br, we, be)

    x = leaf(rng, 1, 3, 5, 5)
    add("reused_input_two_consumers",
        lambda x: T.residual_add(x, T.sigmoid(x)), x)

    return cases


def synthetic_samples(count, rng, side=80, disks=False, jitter=0.06):
    """In-memory annotated people for training smoke tests.

    With ``disks`` each joint gets its own flat-colour blob on a dark
    background (4x4 joint grid plus jitter), so a network can actually
    learn to localise them; otherwise images are uniform noise.
    """
    from effipose.data import Annotation

    samples = []
    scale = side / (1.25 * 200.0)
    base = np.zeros((16, 2))
    for j in range(16):
        base[j] = (0.2 + 0.6 * (j % 4) / 3.0, 0.2 + 0.6 * (j // 4) / 3.0)
    palette = np.zeros((16, 3), np.float32)
    for j in range(16):
        palette[j] = (255.0 * (j % 4) / 3.0, 255.0 * (j // 4) / 3.0, 255.0)
    yy, xx = np.mgrid[0:side, 0:side]
    for i in range(count):
        kps = np.zeros((16, 3))
        kps[:, :2] = (base + rng.uniform(-jitter, jitter, (16, 2))) * side
        kps[:, 2] = 1.0
        if disks:
            image = np.zeros((side, side, 3), np.float32)
            for j in range(16):
                mask = (xx - kps[j, 0]) ** 2 + (yy - kps[j, 1]) ** 2 <= (0.04 * side) ** 2
                image[mask] = palette[j]
        else:
            image = rng.uniform(0.0, 255.0, (side, side, 3)).astype(np.float32)
        head_box = np.array([0.2 * side, 0.2 * side, 0.8 * side, 0.8 * side])
        samples.append(Annotation(
            image_path=f"synthetic://{i}",
            center=np.array([side / 2.0, side / 2.0]),
            scale=scale,
            head_box=head_box,
            keypoints=kps,
            image=image,
        ))
    return samples
