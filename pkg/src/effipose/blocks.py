"""Mobile inverted bottleneck blocks and the Mobile DenseNet detection block.

Five block kinds are supported. MBConv1 has no expansion phase; MBConv6
expands to six times its input width; the starred forms add dropout and a
skip connection (stride 1, equal widths only). E-MBConv6 swaps swish for
E-swish (beta = 1.25) and expands to six times its *output* width, which
keeps it affordable when dense connectivity grows its input.
"""

from dataclasses import dataclass

from . import tensor as T
from .layers import (Activation, BatchNorm2d, Conv2d, DepthwiseConv2d,
                     Dropout, GlobalAvgPool, Layer, Sequential)

MBCONV_KINDS = ("MBConv1", "MBConv1*", "MBConv6", "MBConv6*", "E-MBConv6")


@dataclass(frozen=True)
class MBConvSpec:
    """Static description of one block instance.

    Attributes:
        kind: one of MBCONV_KINDS.
        kernel: depthwise kernel size (3 or 5 in the published tables).
        out_channels: B, the block output width.
        stride: depthwise stride (1 or 2).
        in_channels: M, the incoming width.
        se_ratio: squeeze-and-excitation reduction relative to M.
        dropout_rate: rate for the starred and E- forms.
    """

    kind: str
    kernel: int
    out_channels: int
    stride: int
    in_channels: int
    se_ratio: float = 0.25
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.kind not in MBCONV_KINDS:
            raise ValueError(f"unknown MBConv kind {self.kind!r}; expected one of {MBCONV_KINDS}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.kind in ("MBConv1*", "MBConv6*", "E-MBConv6") and self.stride != 1:
            raise ValueError(f"{self.kind} requires stride 1")
        if self.kind in ("MBConv1*", "MBConv6*") and self.in_channels != self.out_channels:
            raise ValueError(f"{self.kind} needs matching widths for its skip, got {self.in_channels} -> {self.out_channels}")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")

    @property
    def expanded_channels(self):
        if self.kind in ("MBConv1", "MBConv1*"):
            return self.in_channels
        if self.kind == "E-MBConv6":
            return 6 * self.out_channels
        return 6 * self.in_channels

    @property
    def se_channels(self):
        return max(1, int(self.se_ratio * self.in_channels))

    @property
    def activation(self):
        return "eswish" if self.kind == "E-MBConv6" else "swish"

    @property
    def has_skip(self):
        return self.kind in ("MBConv1*", "MBConv6*")

    @property
    def has_dropout(self):
        return self.kind in ("MBConv1*", "MBConv6*", "E-MBConv6")


class SqueezeExcite(Layer):
    """Global pooling -> bottleneck MLP (1x1 convs) -> sigmoid channel gates."""

    def __init__(self, channels, reduced, act_kind, rng):
        self.pool = GlobalAvgPool()
        self.reduce = Conv2d(channels, reduced, 1, rng, bias=True)
        self.act = Activation(act_kind)
        self.expand = Conv2d(reduced, channels, 1, rng, bias=True)
        self.gate = Activation("sigmoid")
        self.out_shape = None

    def forward(self, x, ctx):
        g = self.pool.forward(x, ctx)
        g = self.reduce.forward(g, ctx)
        g = self.act.forward(g, ctx)
        g = self.expand.forward(g, ctx)
        g = self.gate.forward(g, ctx)
        return T.broadcast_mul(x, g)

    def resolve(self, shape):
        g = self.pool.resolve(shape)
        for layer in (self.reduce, self.act, self.expand, self.gate):
            g = layer.resolve(g)
        self.in_shape = self.out_shape = shape
        return shape

    def extra_flops(self):
        self._require_resolved()
        c, h, w = self.out_shape
        return c * h * w


class MBConv(Layer):
    """One mobile inverted bottleneck unit built from an MBConvSpec."""

    def __init__(self, spec: MBConvSpec, rng):
        self.spec = spec
        act = spec.activation
        expanded = spec.expanded_channels
        if expanded != spec.in_channels:
            self.expand = Sequential([
                ("conv", Conv2d(spec.in_channels, expanded, 1, rng)),
                ("bn", BatchNorm2d(expanded)),
                ("act", Activation(act)),
            ])
        else:
            self.expand = None
        self.depthwise = Sequential([
            ("conv", DepthwiseConv2d(expanded, spec.kernel, rng, stride=spec.stride)),
            ("bn", BatchNorm2d(expanded)),
            ("act", Activation(act)),
        ])
        self.se = SqueezeExcite(expanded, spec.se_channels, act, rng)
        self.project = Sequential([
            ("conv", Conv2d(expanded, spec.out_channels, 1, rng)),
            ("bn", BatchNorm2d(spec.out_channels)),
        ])
        self.drop = Dropout(spec.dropout_rate) if spec.has_dropout else None
        self.out_shape = None

    def forward(self, x, ctx):
        h = x
        if self.expand is not None:
            h = self.expand.forward(h, ctx)
        h = self.depthwise.forward(h, ctx)
        h = self.se.forward(h, ctx)
        h = self.project.forward(h, ctx)
        if self.drop is not None:
            h = self.drop.forward(h, ctx)
        if self.spec.has_skip:
            h = T.residual_add(h, x)
        return h

    def resolve(self, shape):
        if shape[0] != self.spec.in_channels:
            raise T.ShapeError("MBConv", f"{self.spec.kind} expects {self.spec.in_channels} channels, got {shape[0]}", axes=("C",))
        self.in_shape = shape
        h = shape
        if self.expand is not None:
            h = self.expand.resolve(h)
        h = self.depthwise.resolve(h)
        h = self.se.resolve(h)
        h = self.project.resolve(h)
        if self.drop is not None:
            h = self.drop.resolve(h)
        self.out_shape = h
        return h

    def extra_flops(self):
        if not self.spec.has_skip:
            return 0
        self._require_resolved()
        c, h, w = self.out_shape
        return c * h * w


class MobileDenseNet(Layer):
    """Three densely connected E-MBConv6(5x5) units, each emitting C maps.

    Unit 1 consumes the block input, every later unit the concatenation of
    all previous unit outputs; the block returns all three outputs joined,
    3C maps total. Unit input widths therefore stay within C..3C as long
    as the block input does.
    """

    def __init__(self, width, in_channels, rng):
        if not width <= in_channels <= 3 * width:
            raise T.ShapeError("MobileDenseNet",
                               f"input width {in_channels} outside [{width}, {3 * width}] for C={width}",
                               axes=("C",))
        def unit(m):
            return MBConv(MBConvSpec("E-MBConv6", 5, width, 1, m), rng)
        self.width = width
        self.in_channels = in_channels
        self.units = [unit(in_channels), unit(width), unit(2 * width)]
        self.out_shape = None

    @property
    def out_channels(self):
        return 3 * self.width

    def forward(self, x, ctx):
        u1 = self.units[0].forward(x, ctx)
        u2 = self.units[1].forward(u1, ctx)
        u3 = self.units[2].forward(T.concat_channels([u1, u2]), ctx)
        return T.concat_channels([u1, u2, u3])

    def resolve(self, shape):
        self.in_shape = shape
        s1 = self.units[0].resolve(shape)
        s2 = self.units[1].resolve(s1)
        s3 = self.units[2].resolve((s1[0] + s2[0], s1[1], s1[2]))
        self.out_shape = (s1[0] + s2[0] + s3[0], s1[1], s1[2])
        return self.out_shape
