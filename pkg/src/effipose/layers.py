"""Layer objects: parameter containers with forward, shape and cost logic.

A layer owns its parameters, knows how to run forward, and once
``resolve`` has propagated an input shape through it, can report its
parameter and FLOP counts without executing anything. Composites find
their children by scanning instance attributes (single layers/parameters
or lists of them), so ``named_parameters`` yields stable slash-separated
paths usable as weight-file record names.

FLOP convention (per single image): one multiply-accumulate = 2 FLOPs,
batch norm folds to 2 FLOPs/element, activations and elementwise glue
cost 1 FLOP/element, concatenation is free.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

FLOP_CONVENTION = "mac=2, bn=2/elem, act=1/elem, convT taps=k^2/s^2"


@dataclass
class RunContext:
    """Execution-time switches shared by every layer in a forward pass."""

    mode: str = "infer"
    rng: np.random.Generator | None = None


class Parameter:
    """Named array slot; non-trainable ones hold state such as BN statistics."""

    def __init__(self, value, trainable=True):
        self.tensor = T.Tensor(np.asarray(value), requires_grad=trainable)
        self.trainable = trainable
        self.name = ""

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = value

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


class Layer:
    """Base class; subclasses add parameters/child layers as attributes."""

    def forward(self, x, ctx):
        raise NotImplementedError

    def resolve(self, shape):
        """Propagate an input shape (C, H, W); returns the output shape."""
        raise NotImplementedError

    def children(self):
        """Yield (name, child) for Layer/Parameter attributes, lists included."""
        for attr, value in vars(self).items():
            if isinstance(value, (Layer, Parameter)):
                yield attr, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Layer, Parameter)):
                        yield f"{attr}/{i}", item

    def named_parameters(self, prefix=""):
        for name, child in self.children():
            path = f"{prefix}{name}"
            if isinstance(child, Parameter):
                child.name = path
                yield path, child
            else:
                yield from child.named_parameters(prefix=path + "/")

    def named_leaves(self, prefix=""):
        """Yield (path, layer) for layers with no child layers of their own."""
        grand = [(n, c) for n, c in self.children() if isinstance(c, Layer)]
        if not grand:
            yield prefix.rstrip("/"), self
            return
        for name, child in grand:
            yield from child.named_leaves(prefix=f"{prefix}{name}/")

    def named_layers(self, prefix=""):
        """Yield (path, layer) for every layer, composites included."""
        yield prefix.rstrip("/"), self
        for name, child in self.children():
            if isinstance(child, Layer):
                yield from child.named_layers(prefix=f"{prefix}{name}/")

    def trainable_parameters(self):
        return [p for _, p in self.named_parameters() if p.trainable]

    def param_count(self):
        """Trainable scalar count (BN running statistics excluded)."""
        total = 0
        for name, child in self.children():
            if isinstance(child, Parameter):
                if child.trainable:
                    total += child.data.size
            else:
                total += child.param_count()
        return total

    def extra_flops(self):
        """Elementwise glue owned by a composite (skip adds, SE gating)."""
        return 0

    def flop_count(self):
        total = self.extra_flops()
        for _, child in self.children():
            if isinstance(child, Layer):
                total += child.flop_count()
        return total

    def cast(self, dtype):
        """Switch every parameter and state buffer to the given float dtype."""
        for _, p in self.named_parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
            p.tensor.grad = None
        return self

    def _require_resolved(self):
        if getattr(self, "out_shape", None) is None:
            raise RuntimeError(f"{type(self).__name__}: resolve() must run before cost accounting")


def _check_channels(layer, shape, expected):
    if shape[0] != expected:
        raise T.ShapeError(type(layer).__name__, f"expected {expected} input channels, got {shape[0]}", axes=("C",))


def he_normal(rng, shape, fan_in, dtype=np.float32):
    """He initialisation: zero-mean normal with std sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Layer):
    """Dense convolution; bias-free by default (a BN usually follows)."""

    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, bias=False, padding="same"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None
        self.out_shape = None

    def forward(self, x, ctx):
        return T.conv2d(x, self.weight.tensor, self.bias.tensor if self.bias else None,
                        stride=self.stride, padding=self.padding)

    def resolve(self, shape):
        _check_channels(self, shape, self.in_channels)
        c, h, w = shape
        if self.padding == "same":
            oh, ow = -(-h // self.stride), -(-w // self.stride)
        else:
            oh = T.conv_output_size(h, self.kernel, self.stride, 0)
            ow = T.conv_output_size(w, self.kernel, self.stride, 0)
        self.in_shape = shape
        self.out_shape = (self.out_channels, oh, ow)
        return self.out_shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        elems = c * h * w
        flops = 2 * self.in_channels * self.kernel * self.kernel * elems
        if self.bias is not None:
            flops += elems
        return flops


class DepthwiseConv2d(Layer):
    def __init__(self, channels, kernel, rng, stride=1, padding="same"):
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(he_normal(rng, (channels, 1, kernel, kernel), kernel * kernel))
        self.out_shape = None

    def forward(self, x, ctx):
        return T.depthwise_conv2d(x, self.weight.tensor, stride=self.stride, padding=self.padding)

    def resolve(self, shape):
        _check_channels(self, shape, self.channels)
        c, h, w = shape
        self.in_shape = shape
        self.out_shape = (c, -(-h // self.stride), -(-w // self.stride))
        return self.out_shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        return 2 * self.kernel * self.kernel * c * h * w


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.99, eps=1e-3):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.running_mean = Parameter(np.zeros(channels, dtype=np.float32), trainable=False)
        self.running_var = Parameter(np.ones(channels, dtype=np.float32), trainable=False)
        self.out_shape = None

    def forward(self, x, ctx):
        return T.batch_norm(x, self.gamma.tensor, self.beta.tensor,
                            self.running_mean.data, self.running_var.data,
                            ctx.mode, momentum=self.momentum, eps=self.eps)

    def resolve(self, shape):
        _check_channels(self, shape, self.channels)
        self.in_shape = self.out_shape = shape
        return shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        return 2 * c * h * w


class Activation(Layer):
    def __init__(self, kind, beta=1.25):
        self.kind = kind
        self.beta = beta
        self.out_shape = None

    def forward(self, x, ctx):
        return T.activation(x, self.kind, self.beta)

    def resolve(self, shape):
        self.in_shape = self.out_shape = shape
        return shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        return c * h * w


class AvgPool(Layer):
    def __init__(self, window=2, stride=2):
        self.window = window
        self.stride = stride
        self.out_shape = None

    def forward(self, x, ctx):
        return T.avg_pool(x, self.window, self.stride)

    def resolve(self, shape):
        c, h, w = shape
        self.in_shape = shape
        self.out_shape = (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)
        return self.out_shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        return self.window * self.window * c * h * w


class GlobalAvgPool(Layer):
    def __init__(self):
        self.out_shape = None

    def forward(self, x, ctx):
        return T.global_avg_pool(x)

    def resolve(self, shape):
        self.in_shape = shape
        self.out_shape = (shape[0], 1, 1)
        return self.out_shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.in_shape
        return c * h * w


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate
        self.out_shape = None

    def forward(self, x, ctx):
        return T.dropout(x, self.rate, ctx.mode, ctx.rng)

    def resolve(self, shape):
        self.in_shape = self.out_shape = shape
        return shape

    def flop_count(self):
        return 0


class ConvTranspose2dBilinear(Layer):
    """4x4 stride-2 transposed conv that starts as exact 2x bilinear upsampling.

    The weight is dense across channels but initialised on the channel
    diagonal with outer([0.25, 0.75, 0.75, 0.25]); it trains freely
    afterwards.
    """

    def __init__(self, channels, kernel=4, stride=2, padding=1):
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.pad = padding
        self.weight = Parameter(T.bilinear_upsample_weight(channels))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.out_shape = None

    def forward(self, x, ctx):
        return T.conv_transpose2d(x, self.weight.tensor, self.bias.tensor,
                                  stride=self.stride, padding=self.pad)

    def resolve(self, shape):
        _check_channels(self, shape, self.channels)
        c, h, w = shape
        self.in_shape = shape
        self.out_shape = (c,
                          (h - 1) * self.stride + self.kernel - 2 * self.pad,
                          (w - 1) * self.stride + self.kernel - 2 * self.pad)
        return self.out_shape

    def flop_count(self):
        self._require_resolved()
        c, h, w = self.out_shape
        taps = (self.kernel * self.kernel) // (self.stride * self.stride)
        return 2 * self.channels * taps * c * h * w + c * h * w


class Sequential(Layer):
    """Chain of named sublayers applied in order."""

    def __init__(self, steps):
        # steps: list of (name, layer) or plain layers (auto-numbered)
        named = []
        for i, step in enumerate(steps):
            if isinstance(step, tuple):
                named.append(step)
            else:
                named.append((str(i), step))
        self.steps = named
        self.out_shape = None

    def children(self):
        for name, layer in self.steps:
            yield name, layer

    def forward(self, x, ctx):
        for _, layer in self.steps:
            x = layer.forward(x, ctx)
        return x

    def resolve(self, shape):
        self.in_shape = shape
        for _, layer in self.steps:
            shape = layer.resolve(shape)
        self.out_shape = shape
        return shape
