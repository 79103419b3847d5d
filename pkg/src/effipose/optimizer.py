"""SGD with momentum, a decaying-triangular cyclical learning rate, and
the training loop that couples them to the sigma schedule.

The rate sweeps lambda_min -> peak -> lambda_min over each 3-epoch cycle;
peaks start at lambda_max and decay by 0.94 per cycle toward the floor
lambda_inf = 10^((log10 lambda_max + log10 lambda_min) / 2) * 2^(sigma_0 - sigma_inf),
the geometric mean of the extremes lifted by how much the target Gaussians
sharpen over training.
"""

import math
import os

import numpy as np

from . import tensor as T
from . import weights as W
from .layers import RunContext
from .supervision import SigmaSchedule, build_targets


def lambda_inf(lr_max, lr_min, sigma_drop):
    """Learning-rate floor the cycle peaks decay toward."""
    mid = 10 ** ((math.log10(lr_max) + math.log10(lr_min)) / 2)
    return mid * 2**sigma_drop


class CLRSchedule:
    """Triangular cyclical learning rate with geometrically decaying peaks."""

    def __init__(self, lr_max, lr_min=None, cycle_epochs=3.0, peak_decay=0.94, sigma_drop=2.0):
        if lr_max <= 0:
            raise ValueError("lr_max must be positive")
        self.lr_max = float(lr_max)
        self.lr_min = float(lr_min) if lr_min is not None else lr_max / 3000.0
        self.cycle_epochs = float(cycle_epochs)
        self.peak_decay = float(peak_decay)
        self.lr_inf = lambda_inf(self.lr_max, self.lr_min, sigma_drop)
        if not self.lr_min < self.lr_inf < self.lr_max:
            raise ValueError(
                f"rate floor {self.lr_inf:g} must lie strictly between "
                f"lambda_min {self.lr_min:g} and lambda_max {self.lr_max:g}")

    def peak(self, cycle):
        return self.lr_inf + (self.lr_max - self.lr_inf) * self.peak_decay**cycle

    def lr_at(self, epoch):
        """Rate at a fractional epoch; piecewise linear and continuous."""
        cycle, pos = divmod(epoch, self.cycle_epochs)
        frac = pos / self.cycle_epochs
        tri = 1.0 - abs(2.0 * frac - 1.0)
        return self.lr_min + (self.peak(int(cycle)) - self.lr_min) * tri


class SGD:
    """Classic momentum: v <- m*v - rate*grad; p <- p + v."""

    def __init__(self, parameters, momentum=0.9):
        self.parameters = list(parameters)
        self.momentum = float(momentum)
        self.velocities = [np.zeros_like(p.data) for p in self.parameters]

    def step(self, rate):
        for p, v in zip(self.parameters, self.velocities):
            g = p.tensor.grad
            if g is None:
                continue
            v *= self.momentum
            v -= rate * g
            p.tensor.data = p.data + v

    def zero_grad(self):
        for p in self.parameters:
            p.tensor.grad = None


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good checkpoint path."""

    def __init__(self, step, checkpoint):
        super().__init__(f"loss became non-finite at step {step}; last checkpoint: {checkpoint}")
        self.step = step
        self.checkpoint = checkpoint


def save_checkpoint(model, optimizer, path):
    """One file holding model parameters, BN state and optimizer velocities."""
    records = {}
    for name, p in model.named_parameters():
        records[f"model/{name}"] = p.data
    trainable = [name for name, p in model.named_parameters() if p.trainable]
    for name, v in zip(trainable, optimizer.velocities):
        records[f"opt/velocity/{name}"] = v
    W.write_records(path, records)


def load_checkpoint(model, optimizer, path):
    records = W.read_records(path)
    for name, p in model.named_parameters():
        key = f"model/{name}"
        if key not in records:
            raise ValueError(f"checkpoint {path} is missing record {key!r}")
        p.tensor.data = records[key].astype(p.data.dtype)
        p.tensor.grad = None
    if optimizer is not None:
        trainable = [name for name, p in model.named_parameters() if p.trainable]
        for name, v in zip(trainable, optimizer.velocities):
            key = f"opt/velocity/{name}"
            if key in records:
                v[...] = records[key]


def train_loop(model, samples, *, epochs, batch_size, lr_max, seed, out_dir,
               schedule=None, momentum=0.9, paf_half_width=1.0,
               image_loader=None, augment=True, log_file=None,
               checkpoint_every=1, step_callback=None, max_steps=None):
    """Train a built PoseModel on annotated samples.

    Writes ``metrics.tsv`` (step, epoch fraction, learning rate, sigma,
    loss; tab-separated) and ``checkpoint.epw`` under ``out_dir``.
    Raises TrainingDiverged when the loss leaves the reals.

    Args:
        step_callback: optional fn(step, model) -> bool; returning True
            stops training early (used by small overfitting runs).
        max_steps: optional hard cap across all epochs.

    Returns:
        dict with 'steps', 'final_loss', 'checkpoint', 'metrics'.
    """
    from .data import batches as make_batches

    schedule = schedule or SigmaSchedule()
    clr = CLRSchedule(lr_max, sigma_drop=schedule.total_drop)
    optimizer = SGD(model.trainable_parameters(), momentum=momentum)
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.epw")
    metrics_path = log_file or os.path.join(out_dir, "metrics.tsv")

    cfg = model.config
    in_hw = tuple(cfg.high_res)
    steps_per_epoch = max(1, len(samples) // batch_size)
    step = 0
    last_loss = float("nan")
    saved = False
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        metrics.write("step\tepoch\tlr\tsigma\tloss\n")
        for epoch in range(epochs):
            for x, kps in make_batches(samples, in_hw, batch_size, rng,
                                       augment=augment, image_loader=image_loader):
                if max_steps is not None and step >= max_steps:
                    break
                fraction = step / steps_per_epoch
                rate = clr.lr_at(fraction)
                sigma = schedule.base_at(fraction)
                targets = build_targets(kps, cfg, model.out_shapes, fraction,
                                        schedule, in_hw=in_hw, paf_half_width=paf_half_width)
                outputs = model.forward(T.Tensor(x), RunContext(mode="train", rng=rng))
                loss = T.mse_loss(outputs, targets)
                last_loss = float(loss.data)
                metrics.write(f"{step}\t{fraction:.6f}\t{rate:.10g}\t{sigma:g}\t{last_loss:.10g}\n")
                if not math.isfinite(last_loss):
                    metrics.flush()
                    raise TrainingDiverged(step, ckpt_path if saved else None)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step(rate)
                step += 1
                if step_callback is not None and step_callback(step, model):
                    save_checkpoint(model, optimizer, ckpt_path)
                    return {"steps": step, "final_loss": last_loss,
                            "checkpoint": ckpt_path, "metrics": metrics_path,
                            "stopped_early": True}
            if (epoch + 1) % checkpoint_every == 0 or epoch + 1 == epochs:
                save_checkpoint(model, optimizer, ckpt_path)
                saved = True
            if max_steps is not None and step >= max_steps:
                break
    save_checkpoint(model, optimizer, ckpt_path)
    return {"steps": step, "final_loss": last_loss,
            "checkpoint": ckpt_path, "metrics": metrics_path,
            "stopped_early": False}
