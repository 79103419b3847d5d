"""Run configuration files: parsing, formatting, validation."""

import pytest

from effipose.config import (RunConfig, format_run_config, load_run_config,
                             parse_run_config, save_run_config)


def test_variant_name_prefills_architecture():
    run = parse_run_config("name = RT\n")
    v = run.variant
    assert v.name == "RT"
    assert v.high_res == (224, 224)
    assert v.high_scale == "B0" and v.low_scale is None
    assert v.detection_width == 40 and v.keypoint_passes == 2
    assert run.lr_max == 1e-2 and run.epochs == 1 and run.seed == 0
    assert run.batch_size is None and run.resolved_batch_size == 20


def test_file_overrides_variant_fields():
    run = parse_run_config(
        "name = RT\nkeypoint_passes = 3\nupscaling = no\n"
        "lr_max = 5e-3\nepochs = 7\nseed = 3\nbatch_size = 4\n"
        "sigma_schedule = 0:4,10:3,20:2\n")
    assert run.variant.keypoint_passes == 3
    assert run.variant.upscaling is False
    assert run.lr_max == 5e-3 and run.epochs == 7 and run.seed == 3
    assert run.resolved_batch_size == 4
    assert run.sigma_schedule.steps == ((0.0, 4.0), (10.0, 3.0), (20.0, 2.0))


def test_custom_config_minimal_fields():
    run = parse_run_config(
        "name = tiny\nhigh_res = 64x48\nhigh_backbone = B0\ndetection_width = 24\n")
    v = run.variant
    assert v.name == "tiny"
    assert v.high_res == (48, 64)  # WxH text, (H, W) tuple
    assert v.low_res is None and v.low_scale is None
    assert v.detection_depth == 1  # derived from the backbone


def test_custom_config_reports_missing_keys():
    with pytest.raises(ValueError, match="high_backbone, detection_width"):
        parse_run_config("name = tiny\nhigh_res = 64x64\n")


def test_unknown_key_carries_line_number():
    with pytest.raises(ValueError, match=r"run\.cfg:2: unknown config key 'bogus'"):
        parse_run_config("name = RT\nbogus = 3\n", source="run.cfg")


def test_duplicate_key_rejected():
    with pytest.raises(ValueError, match=r"<config>:3: duplicate key 'seed'"):
        parse_run_config("name = RT\nseed = 1\nseed = 2\n")


def test_line_without_equals_rejected():
    with pytest.raises(ValueError, match=r"<config>:2: expected key = value"):
        parse_run_config("name = RT\njust words\n")


def test_bad_value_names_key_and_line():
    with pytest.raises(ValueError, match=r"<config>:2: bad value for epochs"):
        parse_run_config("name = RT\nepochs = soon\n")
    with pytest.raises(ValueError, match=r"bad value for high_res.*368x368"):
        parse_run_config("name = RT\nhigh_res = 64\n")
    with pytest.raises(ValueError, match=r"bad value for upscaling.*true/false"):
        parse_run_config("name = RT\nupscaling = maybe\n")


def test_comments_and_blank_lines_ignored():
    run = parse_run_config("# a run\n\nname = RT  # the small one\n")
    assert run.variant.name == "RT"


def test_validation_runs_on_parsed_variant():
    # RT's input is 224x224, so a 64x64 low branch is not its half
    with pytest.raises(ValueError, match="half of high_res"):
        parse_run_config("name = RT\nlow_res = 64x64\nlow_backbone = B0\n")


def test_format_parse_round_trip():
    run = parse_run_config(
        "name = I\nkeypoint_passes = 3\nlr_max = 2.5e-3\nepochs = 12\n"
        "seed = 9\npaf_half_width = 1.5\nsigma_schedule = 0:4,5:2\n")
    text = format_run_config(run)
    back = parse_run_config(text)
    assert back.variant == run.variant
    assert back.lr_max == run.lr_max
    assert back.epochs == run.epochs and back.seed == run.seed
    assert back.paf_half_width == run.paf_half_width
    assert back.sigma_schedule.steps == run.sigma_schedule.steps
    assert back.resolved_batch_size == run.resolved_batch_size


def test_save_load_round_trip(tmp_path):
    run = parse_run_config("name = II\nepochs = 3\n")
    path = tmp_path / "run.cfg"
    save_run_config(run, path)
    back = load_run_config(path)
    assert back.variant == run.variant and back.epochs == 3


def test_load_errors_name_the_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("name = RT\nwhat = 1\n")
    with pytest.raises(ValueError, match=r"run\.cfg:2"):
        load_run_config(path)
