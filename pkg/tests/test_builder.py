"""Variant table, compound scaling, and assembled model structure."""

import numpy as np
import pytest

from effipose.builder import (DEFAULT_BATCH_SIZES, VariantConfig,
                              build_variant, compound_scaling_factor,
                              default_batch_size, detection_depth,
                              variant_config, variant_names)
from effipose.layers import RunContext
from effipose.tensor import ShapeError, Tensor


def test_variant_catalogue():
    assert variant_names() == ("RT", "I", "II", "III", "IV")
    with pytest.raises(ValueError, match="available"):
        variant_config("V")


@pytest.mark.parametrize("name,high,hscale,low,lscale,width,depth", [
    ("RT", 224, "B0", None, None, 40, 1),
    ("I", 256, "B2", 128, "B0", 48, 1),
    ("II", 368, "B4", 184, "B0", 56, 2),
    ("III", 480, "B5", 240, "B1", 64, 3),
    ("IV", 600, "B7", 300, "B3", 80, 4),
])
def test_variant_rows(name, high, hscale, low, lscale, width, depth):
    cfg = variant_config(name)
    assert cfg.high_res == (high, high)
    assert cfg.high_scale == hscale
    assert cfg.low_res == ((low, low) if low else None)
    assert cfg.low_scale == lscale
    assert cfg.detection_width == width
    assert cfg.detection_depth == depth
    assert cfg.skeleton_pass and cfg.keypoint_passes == 2 and cfg.upscaling
    assert cfg.num_keypoints == 16 and cfg.num_limbs == 15


def test_detection_depth_tracks_alpha_phi():
    depths = {s: detection_depth(s) for s in ("B0", "B1", "B2", "B3", "B4", "B5", "B7")}
    assert depths == {"B0": 1, "B1": 1, "B2": 1, "B3": 2, "B4": 2, "B5": 3, "B7": 4}


def test_compound_scaling_factor_close_to_doubling():
    assert compound_scaling_factor(0) == 1.0
    per_phi = compound_scaling_factor(1)
    assert per_phi == pytest.approx(1.2 * 1.1**2 * 1.15**2)
    for phi in (1, 2):
        assert abs(compound_scaling_factor(phi) - 2.0**phi) / 2.0**phi < 0.08


def test_default_batch_sizes():
    assert DEFAULT_BATCH_SIZES == {"RT": 20, "I": 20, "II": 20, "III": 10, "IV": 5}
    assert default_batch_size("III") == 10
    assert default_batch_size("my-custom-variant") == 20  # fallback


def test_config_validation():
    with pytest.raises(ValueError, match="keypoint_passes"):
        variant_config("RT", keypoint_passes=0)
    with pytest.raises(ValueError, match="keypoint_passes"):
        variant_config("RT", keypoint_passes=4)
    cfg = variant_config("RT", keypoint_passes=3)
    assert cfg.total_passes == 4  # skeleton + 3 keypoint passes


def test_cross_resolution_flag():
    assert not variant_config("RT").cross_resolution
    assert variant_config("I").cross_resolution
    solo = variant_config("I", cross_resolution=False)
    assert solo.low_res is None and solo.low_scale is None
    assert not solo.cross_resolution


def _tiny(name="RT", **overrides):
    cfg = variant_config(name, high_res=(64, 64), **overrides)
    return build_variant(cfg, seed=0)


def test_head_sizes_follow_pass_layout():
    model = _tiny()
    assert [p.out_maps for p in model.passes] == [30, 16, 16]
    model = _tiny(skeleton_pass=False, keypoint_passes=1)
    assert [p.out_maps for p in model.passes] == [16]
    model = _tiny(keypoint_passes=3)
    assert [p.out_maps for p in model.passes] == [30, 16, 16, 16]


def test_pass_inputs_grow_by_previous_heads():
    model = _tiny()
    feats = model.feature_channels
    ins = [p.blocks.steps[0][1].in_channels for p in model.passes]
    assert ins == [feats, feats + 30, feats + 30 + 16]


def test_upscaling_is_three_doubling_stages():
    model = _tiny()
    assert len(model.upscale.steps) == 3
    assert model.out_shapes[-1] == (16, 64, 64)
    bare = _tiny(upscaling=False)
    assert bare.upscale is None
    assert bare.out_shapes[-1] == (16, 8, 8)


def test_forward_returns_one_map_stack_per_head():
    model = _tiny()
    x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 64, 64)).astype(np.float32))
    outs = model.forward(x, RunContext(mode="infer"))
    assert [o.data.shape for o in outs] == [(1,) + s for s in model.out_shapes]
    assert outs[-1].data.shape == (1, 16, 64, 64)


def test_low_branch_runs_at_half_resolution():
    cfg = variant_config("I", high_res=(64, 64), low_res=(32, 32))
    model = build_variant(cfg, seed=0)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 64, 64)).astype(np.float32))
    outs = model.forward(x, RunContext(mode="infer"))
    # stride-8 high grid and stride-4 low grid coincide at 8x8
    assert model.feature_channels == model.high_backbone.out_channels + model.low_backbone.out_channels
    assert outs[0].data.shape[2:] == (8, 8)


def test_low_res_must_be_half_of_high_res():
    with pytest.raises(ValueError, match="half of high_res"):
        variant_config("I", high_res=(64, 64), low_res=(48, 48))


def test_indivisible_input_grids_are_rejected():
    # at 57 the stride-8 grid is 8x8 but the pooled stride-4 grid is 7x7
    cfg = variant_config("I", high_res=(57, 57), low_res=(28, 28))
    with pytest.raises(ShapeError) as err:
        build_variant(cfg, seed=0)
    assert "8x8" in str(err.value) and "7x7" in str(err.value)


def test_custom_config_needs_consistent_fields():
    with pytest.raises(ValueError):
        VariantConfig(name="x", high_res=(64, 64), high_scale="B0",
                      low_res=(32, 32), low_scale=None,
                      detection_width=40, detection_depth=1).validate()


def test_same_seed_builds_identical_weights():
    a = _tiny()
    b = _tiny()
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)
    c = build_variant(variant_config("RT", high_res=(64, 64)), seed=1)
    stem_a = dict(a.named_parameters())["high_backbone/stem/conv/weight"]
    stem_c = dict(c.named_parameters())["high_backbone/stem/conv/weight"]
    assert not np.array_equal(stem_a.data, stem_c.data)
