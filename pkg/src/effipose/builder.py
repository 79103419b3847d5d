"""Variant construction: backbones, detection passes, upscaling.

A variant couples a high-resolution backbone (blocks 1-3, stride 8) with
an optional half-resolution branch (blocks 1-2 of a smaller scale,
stride 4 of its own input, so the two feature maps align), concatenates
the two, and runs an optional skeleton (part-affinity) pass followed by
one to three keypoint passes. Every pass sees the backbone features
joined with all previous pass outputs and ends in a single 1x1
prediction conv. Three transposed convolutions finally lift the last
keypoint maps back to the input resolution.

Detection depth (Mobile DenseNets per pass) follows the compound depth
coefficient of the high backbone: D = floor(alpha_phi + 0.5).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .backbones import Backbone, alpha_phi, backbone_scales
from .blocks import MobileDenseNet
from .layers import AvgPool, Conv2d, ConvTranspose2dBilinear, Layer, Sequential

SCALING_ALPHA = 1.2
SCALING_BETA = 1.1
SCALING_GAMMA = 1.15

VARIANT_TABLE = {
    "RT": dict(high_res=(224, 224), high_scale="B0", low_res=None, low_scale=None, detection_width=40),
    "I": dict(high_res=(256, 256), high_scale="B2", low_res=(128, 128), low_scale="B0", detection_width=48),
    "II": dict(high_res=(368, 368), high_scale="B4", low_res=(184, 184), low_scale="B0", detection_width=56),
    "III": dict(high_res=(480, 480), high_scale="B5", low_res=(240, 240), low_scale="B1", detection_width=64),
    "IV": dict(high_res=(600, 600), high_scale="B7", low_res=(300, 300), low_scale="B3", detection_width=80),
}

DEFAULT_BATCH_SIZES = {"RT": 20, "I": 20, "II": 20, "III": 10, "IV": 5}


def detection_depth(scale):
    """Mobile DenseNets per pass for a backbone scale: floor(alpha^phi + 0.5)."""
    return math.floor(alpha_phi(scale) + 0.5)


def compound_scaling_factor(phi):
    """Total resource factor (alpha * beta^2 * gamma^2) ** phi."""
    return (SCALING_ALPHA * SCALING_BETA**2 * SCALING_GAMMA**2) ** phi


@dataclass
class VariantConfig:
    """Resolved architecture description; see variant_config for defaults."""

    name: str
    high_res: tuple
    high_scale: str
    low_res: tuple | None
    low_scale: str | None
    detection_width: int
    detection_depth: int
    skeleton_pass: bool = True
    keypoint_passes: int = 2
    upscaling: bool = True
    num_keypoints: int = 16
    num_limbs: int = 15

    def validate(self):
        if self.high_scale not in backbone_scales():
            raise ValueError(f"unsupported backbone scale {self.high_scale!r}; available: {', '.join(backbone_scales())}")
        if (self.low_res is None) != (self.low_scale is None):
            raise ValueError("low_res and low_scale must be given together")
        if self.low_scale is not None and self.low_scale not in backbone_scales():
            raise ValueError(f"unsupported backbone scale {self.low_scale!r}; available: {', '.join(backbone_scales())}")
        if not 1 <= self.keypoint_passes <= 3:
            raise ValueError(f"keypoint_passes must be in 1..3, got {self.keypoint_passes}")
        if self.detection_depth < 1:
            raise ValueError("detection_depth must be >= 1")
        if self.num_keypoints < 1 or self.num_limbs < 1:
            raise ValueError("num_keypoints and num_limbs must be positive")
        for res in (self.high_res, self.low_res):
            if res is not None and (len(res) != 2 or min(res) < 16):
                raise ValueError(f"resolution {res} must be (H, W) with sides >= 16")
        if self.low_res is not None:
            half = (self.high_res[0] // 2, self.high_res[1] // 2)
            if tuple(self.low_res) != half:
                raise ValueError(
                    f"low_res {tuple(self.low_res)} must be half of high_res "
                    f"{tuple(self.high_res)}, i.e. {half}; the low branch pools the input by 2")
        return self

    @property
    def cross_resolution(self):
        return self.low_res is not None

    @property
    def total_passes(self):
        return self.keypoint_passes + (1 if self.skeleton_pass else 0)


def variant_names():
    return tuple(VARIANT_TABLE)


def variant_config(name, **overrides):
    """Config for a named variant (RT, I, II, III, IV), with overrides.

    Overrides accept any VariantConfig field; ``cross_resolution=False``
    clears the low branch.
    """
    if name not in VARIANT_TABLE:
        raise ValueError(f"unknown variant {name!r}; available: {', '.join(VARIANT_TABLE)}")
    row = VARIANT_TABLE[name]
    cfg = VariantConfig(
        name=name,
        high_res=row["high_res"],
        high_scale=row["high_scale"],
        low_res=row["low_res"],
        low_scale=row["low_scale"],
        detection_width=row["detection_width"],
        detection_depth=detection_depth(row["high_scale"]),
    )
    if overrides.pop("cross_resolution", True) is False:
        cfg = replace(cfg, low_res=None, low_scale=None)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def default_batch_size(name):
    return DEFAULT_BATCH_SIZES.get(name, 20)


class DetectionPass(Layer):
    """Stacked Mobile DenseNets followed by a 1x1 prediction conv."""

    def __init__(self, in_channels, width, depth, out_maps, rng):
        blocks = []
        ch = in_channels
        for _ in range(depth):
            md = MobileDenseNet(width, ch, rng)
            ch = md.out_channels
            blocks.append(md)
        self.blocks = Sequential(blocks)
        self.head = Conv2d(ch, out_maps, 1, rng, bias=True)
        self.out_maps = out_maps
        self.out_shape = None

    def forward(self, x, ctx):
        return self.head.forward(self.blocks.forward(x, ctx), ctx)

    def resolve(self, shape):
        self.in_shape = shape
        self.out_shape = self.head.resolve(self.blocks.resolve(shape))
        return self.out_shape


class PoseModel(Layer):
    """Executable graph for one variant; forward returns all supervised maps."""

    def __init__(self, config: VariantConfig, rng):
        config.validate()
        self.config = config
        self.high_backbone = Backbone(config.high_scale, 3, rng)
        if config.cross_resolution:
            self.low_pool = AvgPool(2, 2)
            self.low_backbone = Backbone(config.low_scale, 2, rng)
            feature_channels = self.high_backbone.out_channels + self.low_backbone.out_channels
        else:
            self.low_pool = None
            self.low_backbone = None
            feature_channels = self.high_backbone.out_channels

        self.feature_channels = feature_channels
        q, p = config.num_keypoints, config.num_limbs
        head_sizes = ([2 * p] if config.skeleton_pass else []) + [q] * config.keypoint_passes
        passes = []
        in_ch = feature_channels
        for maps in head_sizes:
            passes.append(DetectionPass(in_ch, config.detection_width, config.detection_depth, maps, rng))
            in_ch += maps
        self.passes = passes
        if config.upscaling:
            self.upscale = Sequential([ConvTranspose2dBilinear(q) for _ in range(3)])
        else:
            self.upscale = None
        self.out_shape = None
        self.out_shapes = None
        self.resolve((3,) + tuple(config.high_res))

    def _features(self, x, ctx):
        high = self.high_backbone.forward(x, ctx)
        if self.low_backbone is None:
            return high
        low = self.low_backbone.forward(self.low_pool.forward(x, ctx), ctx)
        return T.concat_channels([high, low])

    def forward(self, x, ctx):
        """Run the full graph; returns one tensor per supervised head."""
        feats = self._features(x, ctx)
        outputs = []
        current = feats
        for stage in self.passes:
            outputs.append(stage.forward(current, ctx))
            current = T.concat_channels([feats] + outputs)
        if self.upscale is not None:
            outputs.append(self.upscale.forward(outputs[-1], ctx))
        return outputs

    def resolve(self, shape):
        self.in_shape = shape
        high = self.high_backbone.resolve(shape)
        feats = high
        if self.low_backbone is not None:
            low = self.low_backbone.resolve(self.low_pool.resolve(shape))
            if high[1:] != low[1:]:
                raise T.ShapeError(
                    "cross_resolution",
                    f"high branch {self.config.high_res} reaches {high[1]}x{high[2]} at stride 8 "
                    f"but low branch {self.config.low_res} reaches {low[1]}x{low[2]} at stride 4",
                    axes=("H", "W"))
            feats = (high[0] + low[0], high[1], high[2])
        shapes = []
        ch = feats[0]
        for stage in self.passes:
            out = stage.resolve((ch, feats[1], feats[2]))
            shapes.append(out)
            ch += out[0]
        if self.upscale is not None:
            shapes.append(self.upscale.resolve(shapes[-1]))
        self.out_shapes = shapes
        self.out_shape = shapes[-1]
        return self.out_shape


def build_variant(config, seed=0):
    """Materialise a PoseModel from a config or a variant name."""
    if isinstance(config, str):
        config = variant_config(config)
    rng = np.random.default_rng(seed)
    return PoseModel(config, rng)
