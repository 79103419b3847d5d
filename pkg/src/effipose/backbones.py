"""EfficientNet backbone fronts: stem plus the first three block groups.

Only the layers the pose networks use are materialised (stride falls to
8 after block 3, or 4 when just two blocks are requested for a low-
resolution branch). The per-scale layout is transcribed into STAGE_SPECS;
``alpha_phi`` is the compound depth coefficient alpha^phi that also sets
how many detection blocks a variant stacks.
"""

import numpy as np

from .blocks import MBConv, MBConvSpec
from .layers import Activation, BatchNorm2d, Conv2d, Layer, Sequential


def _units(*rows):
    """Expand (kind, kernel, width, stride, repeat) rows into unit tuples."""
    out = []
    for kind, kernel, width, stride, repeat in rows:
        out.extend([(kind, kernel, width, stride)] * repeat)
    return out


STAGE_SPECS = {
    "B0": {
        "stem": 32,
        "alpha_phi": 1.0,
        "block1": _units(("MBConv1", 3, 16, 1, 1)),
        "block2": _units(("MBConv6", 3, 24, 2, 1), ("MBConv6*", 3, 24, 1, 1)),
        "block3": _units(("MBConv6", 5, 40, 2, 1), ("MBConv6*", 5, 40, 1, 1)),
    },
    "B1": {
        "stem": 32,
        "alpha_phi": 1.2,
        "block1": _units(("MBConv1", 3, 16, 1, 1), ("MBConv1*", 3, 16, 1, 1)),
        "block2": _units(("MBConv6", 3, 24, 2, 1), ("MBConv6*", 3, 24, 1, 2)),
        "block3": _units(("MBConv6", 5, 40, 2, 1), ("MBConv6*", 5, 40, 1, 2)),
    },
    "B2": {
        "stem": 32,
        "alpha_phi": 1.4,
        "block1": _units(("MBConv1", 3, 16, 1, 1), ("MBConv1*", 3, 16, 1, 1)),
        "block2": _units(("MBConv6", 3, 24, 2, 1), ("MBConv6*", 3, 24, 1, 2)),
        "block3": _units(("MBConv6", 5, 48, 2, 1), ("MBConv6*", 5, 48, 1, 2)),
    },
    "B3": {
        "stem": 40,
        "alpha_phi": 1.7,
        "block1": _units(("MBConv1", 3, 24, 1, 1), ("MBConv1*", 3, 24, 1, 1)),
        "block2": _units(("MBConv6", 3, 32, 2, 1), ("MBConv6*", 3, 32, 1, 2)),
        "block3": _units(("MBConv6", 5, 48, 2, 1), ("MBConv6*", 5, 48, 1, 2)),
    },
    "B4": {
        "stem": 48,
        "alpha_phi": 2.1,
        "block1": _units(("MBConv1", 3, 24, 1, 1), ("MBConv1*", 3, 24, 1, 1)),
        "block2": _units(("MBConv6", 3, 32, 2, 1), ("MBConv6*", 3, 32, 1, 3)),
        "block3": _units(("MBConv6", 5, 56, 2, 1), ("MBConv6*", 5, 56, 1, 3)),
    },
    "B5": {
        "stem": 48,
        "alpha_phi": 2.5,
        "block1": _units(("MBConv1", 3, 24, 1, 1), ("MBConv1*", 3, 24, 1, 2)),
        "block2": _units(("MBConv6", 3, 40, 2, 1), ("MBConv6*", 3, 40, 1, 4)),
        "block3": _units(("MBConv6", 5, 64, 2, 1), ("MBConv6*", 5, 64, 1, 4)),
    },
    "B7": {
        "stem": 64,
        "alpha_phi": 3.6,
        "block1": _units(("MBConv1", 3, 32, 1, 1), ("MBConv1*", 3, 32, 1, 3)),
        "block2": _units(("MBConv6", 3, 48, 2, 1), ("MBConv6*", 3, 48, 1, 6)),
        "block3": _units(("MBConv6", 5, 80, 2, 1), ("MBConv6*", 5, 80, 1, 6)),
    },
}


def backbone_scales():
    return tuple(STAGE_SPECS)


def alpha_phi(scale):
    _check_scale(scale)
    return STAGE_SPECS[scale]["alpha_phi"]


def _check_scale(scale):
    if scale not in STAGE_SPECS:
        raise ValueError(
            f"unsupported backbone scale {scale!r}; available: {', '.join(STAGE_SPECS)}")


class Backbone(Layer):
    """Stem conv + the first ``num_blocks`` MBConv groups of one scale."""

    def __init__(self, scale, num_blocks, rng):
        _check_scale(scale)
        if num_blocks not in (1, 2, 3):
            raise ValueError(f"num_blocks must be 1, 2 or 3, got {num_blocks}")
        spec = STAGE_SPECS[scale]
        self.scale = scale
        self.num_blocks = num_blocks
        width = spec["stem"]
        self.stem = Sequential([
            ("conv", Conv2d(3, width, 3, rng, stride=2)),
            ("bn", BatchNorm2d(width)),
            ("act", Activation("swish")),
        ])
        groups = []
        for name in ("block1", "block2", "block3")[:num_blocks]:
            units = []
            for kind, kernel, out_ch, stride in spec[name]:
                units.append(MBConv(MBConvSpec(kind, kernel, out_ch, stride, width), rng))
                width = out_ch
            groups.append((name, Sequential(units)))
        self.blocks = Sequential(groups)
        self.out_channels = width
        self.stride = 2 * (2 ** max(0, num_blocks - 1))
        self.out_shape = None

    def forward(self, x, ctx):
        return self.blocks.forward(self.stem.forward(x, ctx), ctx)

    def resolve(self, shape):
        self.in_shape = shape
        self.out_shape = self.blocks.resolve(self.stem.resolve(shape))
        return self.out_shape


def build_backbone(scale, num_blocks, rng=None):
    if rng is None:
        rng = np.random.default_rng(0)
    return Backbone(scale, num_blocks, rng)
