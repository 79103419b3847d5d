"""Flat key=value run configuration files.

A run config couples an architecture (a VariantConfig) with the training
settings that belong next to it. Known variant names prefill every
architecture field, so a file may be as short as ``name = RT``; unknown
keys are rejected with their line number. Every training/eval run writes
its resolved config next to its outputs.
"""

from dataclasses import dataclass, field

from .builder import (VARIANT_TABLE, VariantConfig, default_batch_size,
                      detection_depth, variant_config)
from .supervision import SigmaSchedule

_KEYS = (
    "name", "high_res", "low_res", "high_backbone", "low_backbone",
    "detection_width", "detection_depth", "skeleton_pass", "keypoint_passes",
    "upscaling", "num_keypoints", "num_limbs",
    "lr_max", "batch_size", "sigma_schedule", "paf_half_width",
    "seed", "epochs",
)


@dataclass
class RunConfig:
    variant: VariantConfig
    lr_max: float = 1e-2
    batch_size: int | None = None
    sigma_schedule: SigmaSchedule = field(default_factory=SigmaSchedule)
    paf_half_width: float = 1.0
    seed: int = 0
    epochs: int = 1

    @property
    def resolved_batch_size(self):
        if self.batch_size is not None:
            return self.batch_size
        return default_batch_size(self.variant.name)


def _parse_res(value):
    if value.lower() == "none":
        return None
    w, _, h = value.lower().partition("x")
    if not h:
        raise ValueError(f"resolution {value!r} must look like 368x368 or none")
    return (int(h), int(w))


def _parse_bool(value):
    low = value.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _format_res(res):
    return "none" if res is None else f"{res[1]}x{res[0]}"


def parse_run_config(text, source="<config>"):
    """Parse key=value lines into a RunConfig; '#' starts a comment."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key not in _KEYS:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in entries:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)

    def take(key, convert, default):
        if key not in entries:
            return default
        value, lineno = entries.pop(key)
        try:
            return convert(value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None

    name = take("name", str, "custom")
    if name in VARIANT_TABLE:
        base = variant_config(name)
    else:
        required = ("high_res", "high_backbone", "detection_width")
        missing = [k for k in required if k not in entries]
        if missing:
            raise ValueError(f"{source}: custom config needs keys: {', '.join(missing)}")
        scale = entries["high_backbone"][0]
        base = VariantConfig(
            name=name, high_res=(0, 0), high_scale=scale, low_res=None,
            low_scale=None, detection_width=0, detection_depth=detection_depth(scale))

    variant = VariantConfig(
        name=name,
        high_res=take("high_res", _parse_res, base.high_res),
        high_scale=take("high_backbone", str, base.high_scale),
        low_res=take("low_res", _parse_res, base.low_res),
        low_scale=take("low_backbone", lambda v: None if v.lower() == "none" else v, base.low_scale),
        detection_width=take("detection_width", int, base.detection_width),
        detection_depth=take("detection_depth", int, base.detection_depth),
        skeleton_pass=take("skeleton_pass", _parse_bool, base.skeleton_pass),
        keypoint_passes=take("keypoint_passes", int, base.keypoint_passes),
        upscaling=take("upscaling", _parse_bool, base.upscaling),
        num_keypoints=take("num_keypoints", int, base.num_keypoints),
        num_limbs=take("num_limbs", int, base.num_limbs),
    ).validate()
    run = RunConfig(
        variant=variant,
        lr_max=take("lr_max", float, 1e-2),
        batch_size=take("batch_size", int, None),
        sigma_schedule=take("sigma_schedule", SigmaSchedule.parse, SigmaSchedule()),
        paf_half_width=take("paf_half_width", float, 1.0),
        seed=take("seed", int, 0),
        epochs=take("epochs", int, 1),
    )
    return run


def format_run_config(run):
    v = run.variant
    lines = [
        f"name = {v.name}",
        f"high_res = {_format_res(v.high_res)}",
        f"high_backbone = {v.high_scale}",
        f"low_res = {_format_res(v.low_res)}",
        f"low_backbone = {v.low_scale or 'none'}",
        f"detection_width = {v.detection_width}",
        f"detection_depth = {v.detection_depth}",
        f"skeleton_pass = {str(v.skeleton_pass).lower()}",
        f"keypoint_passes = {v.keypoint_passes}",
        f"upscaling = {str(v.upscaling).lower()}",
        f"num_keypoints = {v.num_keypoints}",
        f"num_limbs = {v.num_limbs}",
        f"lr_max = {run.lr_max:g}",
        f"batch_size = {run.resolved_batch_size}",
        f"sigma_schedule = {run.sigma_schedule.format()}",
        f"paf_half_width = {run.paf_half_width:g}",
        f"seed = {run.seed}",
        f"epochs = {run.epochs}",
    ]
    return "\n".join(lines) + "\n"


def load_run_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read(), source=str(path))


def save_run_config(run, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_run_config(run))
