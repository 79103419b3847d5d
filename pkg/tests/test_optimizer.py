"""Learning-rate schedule, momentum updates, and the training loop."""

import math

import numpy as np
import pytest

import helpers
from effipose.builder import build_variant, variant_config
from effipose.layers import Parameter
from effipose.optimizer import (CLRSchedule, SGD, TrainingDiverged,
                                lambda_inf, load_checkpoint, save_checkpoint,
                                train_loop)
from effipose.supervision import SigmaSchedule


def test_rate_floor_spot_value():
    # lr_max 1e-2, lr_min = lr_max / 3000, sigma falling 4 -> 2
    value = lambda_inf(1e-2, 1e-2 / 3000.0, 2.0)
    assert value == pytest.approx(7.30297e-4, abs=1e-7)


def test_rate_floor_formula():
    lo, hi, drop = 3e-6, 2e-2, 1.5
    expected = 10 ** ((math.log10(hi) + math.log10(lo)) / 2) * 2**drop
    assert lambda_inf(hi, lo, drop) == pytest.approx(expected, rel=1e-12)


def test_schedule_triangle_shape():
    clr = CLRSchedule(1e-2)
    assert clr.lr_min == pytest.approx(1e-2 / 3000)
    assert clr.lr_at(0.0) == pytest.approx(clr.lr_min)
    assert clr.lr_at(1.5) == pytest.approx(clr.peak(0))  # apex mid-cycle
    assert clr.lr_at(3.0) == pytest.approx(clr.lr_min)
    assert clr.lr_at(0.75) == pytest.approx((clr.lr_min + clr.peak(0)) / 2)
    assert clr.peak(0) == clr.lr_max


def test_schedule_peaks_decay_toward_floor():
    clr = CLRSchedule(1e-2)
    for k in range(6):
        expected = clr.lr_inf + (clr.lr_max - clr.lr_inf) * 0.94**k
        assert clr.peak(k) == pytest.approx(expected)
        assert clr.peak(k) > clr.lr_inf
    assert clr.peak(500) == pytest.approx(clr.lr_inf, rel=1e-8)


def test_schedule_is_continuous_over_cycles():
    clr = CLRSchedule(5e-3)
    grid = np.linspace(0.0, 9.0, 2001)
    values = np.array([clr.lr_at(e) for e in grid])
    assert np.all(values >= clr.lr_min - 1e-15)
    assert np.all(values <= clr.lr_max + 1e-15)
    steps = np.abs(np.diff(values))
    # piecewise linear with bounded slope: no jumps on a fine grid
    assert steps.max() < (clr.lr_max - clr.lr_min) / 100


def test_schedule_rejects_degenerate_floor():
    with pytest.raises(ValueError, match="floor"):
        CLRSchedule(1e-2, lr_min=9e-3)


def test_sgd_hand_computed_steps():
    p = Parameter(np.array([1.0]))
    opt = SGD([p], momentum=0.9)
    p.tensor.grad = np.array([1.0])
    opt.step(0.1)
    assert p.data[0] == pytest.approx(0.9)  # v = -0.1
    p.tensor.grad = np.array([1.0])
    opt.step(0.1)
    # v = 0.9 * -0.1 - 0.1 = -0.19: second displacement is 1.9x the first
    assert p.data[0] == pytest.approx(0.71)


def test_sgd_without_momentum_is_plain_descent():
    p = Parameter(np.array([2.0]))
    opt = SGD([p], momentum=0.0)
    for _ in range(3):
        p.tensor.grad = np.array([0.5])
        opt.step(0.2)
    assert p.data[0] == pytest.approx(2.0 - 3 * 0.2 * 0.5)


def test_sgd_skips_parameters_without_gradients():
    p = Parameter(np.array([1.0]))
    opt = SGD([p])
    opt.step(0.5)  # no grad: no movement
    assert p.data[0] == 1.0
    opt.zero_grad()
    assert p.tensor.grad is None


def _tiny_model():
    cfg = variant_config("RT", high_res=(32, 32), keypoint_passes=1,
                         skeleton_pass=False, upscaling=False)
    return build_variant(cfg, seed=0), cfg


def test_checkpoint_round_trip_restores_velocities(tmp_path):
    model, _ = _tiny_model()
    opt = SGD(model.trainable_parameters())
    for v in opt.velocities:
        v += 0.25
    path = tmp_path / "ckpt.epw"
    save_checkpoint(model, opt, path)
    model2, _ = _tiny_model()
    opt2 = SGD(model2.trainable_parameters())
    load_checkpoint(model2, opt2, path)
    for (_, a), (_, b) in zip(model.named_parameters(), model2.named_parameters()):
        assert np.array_equal(a.data, b.data)
    for va, vb in zip(opt.velocities, opt2.velocities):
        assert np.array_equal(va, vb)


def _train(tmp_path, samples, **kwargs):
    model, _ = _tiny_model()
    args = dict(epochs=1, batch_size=4, lr_max=1e-3, seed=0, out_dir=str(tmp_path))
    args.update(kwargs)
    return model, train_loop(model, samples, **args)


def test_train_loop_reduces_loss(tmp_path):
    samples = helpers.synthetic_samples(8, np.random.default_rng(0), side=40, disks=True)
    model, result = _train(tmp_path, samples, epochs=10, lr_max=5e-3, augment=False)
    metrics = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert metrics[0] == "step\tepoch\tlr\tsigma\tloss"
    losses = [float(line.split("\t")[4]) for line in metrics[1:]]
    assert result["steps"] == 20
    assert losses[-1] < losses[0] * 0.8
    assert (tmp_path / "checkpoint.epw").exists()


def test_metrics_follow_the_schedules(tmp_path):
    samples = helpers.synthetic_samples(4, np.random.default_rng(1), side=40)
    schedule = SigmaSchedule(((0, 4.0), (1, 3.0), (2, 2.0)))
    _, result = _train(tmp_path, samples, epochs=3, batch_size=4, schedule=schedule)
    rows = [line.split("\t") for line in
            (tmp_path / "metrics.tsv").read_text().splitlines()[1:]]
    clr = CLRSchedule(1e-3, sigma_drop=schedule.total_drop)
    for row in rows:
        step, epoch, lr, sigma = int(row[0]), float(row[1]), float(row[2]), float(row[3])
        assert lr == pytest.approx(clr.lr_at(epoch), rel=1e-6)
        assert sigma == schedule.base_at(epoch)
    assert [float(r[3]) for r in rows] == [4.0, 3.0, 2.0]


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_train_loop_aborts_on_divergence(tmp_path):
    samples = helpers.synthetic_samples(4, np.random.default_rng(2), side=40)
    with pytest.raises(TrainingDiverged) as err:
        _train(tmp_path, samples, epochs=3, batch_size=4, lr_max=1e9)
    assert err.value.step >= 0
    text = (tmp_path / "metrics.tsv").read_text()
    assert "nan" in text or "inf" in text  # the bad row is still logged


def test_step_callback_stops_early(tmp_path):
    samples = helpers.synthetic_samples(8, np.random.default_rng(3), side=40)
    model, result = _train(tmp_path, samples, epochs=50, batch_size=4,
                           step_callback=lambda step, m: step >= 3)
    assert result["stopped_early"]
    assert result["steps"] == 3
    assert (tmp_path / "checkpoint.epw").exists()


def test_max_steps_caps_training(tmp_path):
    samples = helpers.synthetic_samples(8, np.random.default_rng(4), side=40)
    _, result = _train(tmp_path, samples, epochs=50, batch_size=4, max_steps=5)
    assert result["steps"] == 5
