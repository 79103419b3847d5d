"""Annotated-sample loading, affine augmentation and batch assembly.

Annotations are comma-separated text, one person per line:

    image_path, center_x, center_y, scale, head_x1, head_y1, head_x2, head_y2,
    x_0, y_0, v_0, ..., x_15, y_15, v_15

``scale`` follows the person-height convention (person spans roughly
200 * scale source pixels); ``#`` starts a comment. The crop around the
person covers 1.25 * 200 * scale pixels and is resampled to the network
resolution. Augmentation composes a horizontal flip (p = 0.5), a scale
from U(0.75, 1.25) and a rotation from U(-45, 45) degrees, all about the
person centre, into the same single affine warp (bilinear, edge-clamped).
"""

from dataclasses import dataclass, field

import numpy as np

from .supervision import FLIP_PAIRS, NUM_JOINTS

CROP_MARGIN = 1.25
SCALE_TO_PIXELS = 200.0
FLIP_PROB = 0.5
SCALE_RANGE = (0.75, 1.25)
ROTATION_RANGE_DEG = 45.0


@dataclass
class Annotation:
    """One person instance: where it is and where its joints are."""

    image_path: str
    center: np.ndarray
    scale: float
    head_box: np.ndarray
    keypoints: np.ndarray
    image: np.ndarray | None = field(default=None, repr=False, compare=False)

    def crop_side(self):
        return CROP_MARGIN * SCALE_TO_PIXELS * self.scale


def parse_annotations(path):
    """Read an annotation file; errors carry 1-based line numbers."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            expected = 1 + 2 + 1 + 4 + 3 * NUM_JOINTS
            if len(fields) != expected:
                raise ValueError(f"{path}:{lineno}: expected {expected} comma-separated fields, got {len(fields)}")
            try:
                numbers = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            samples.append(Annotation(
                image_path=fields[0],
                center=np.array(numbers[0:2], dtype=np.float64),
                scale=numbers[2],
                head_box=np.array(numbers[3:7], dtype=np.float64),
                keypoints=np.array(numbers[7:], dtype=np.float64).reshape(NUM_JOINTS, 3),
            ))
    return samples


def write_annotations(path, samples):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            nums = [*s.center, s.scale, *s.head_box, *s.keypoints.reshape(-1)]
            fh.write(s.image_path + ", " + ", ".join(f"{v:g}" for v in nums) + "\n")


def load_image(path):
    """Image file -> float32 RGB HWC in [0, 255]."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32)


def normalize_image(image):
    """[0, 255] -> [-1, 1]."""
    return image.astype(np.float32) / 127.5 - 1.0


# Affine transforms are 2x3 matrices mapping column vectors (x, y, 1).

def identity_transform():
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float64)


def compose(outer, inner):
    """outer(inner(p)) as a single 2x3 matrix."""
    o = np.vstack([outer, [0.0, 0.0, 1.0]])
    i = np.vstack([inner, [0.0, 0.0, 1.0]])
    return (o @ i)[:2]


def invert(matrix):
    m = np.vstack([matrix, [0.0, 0.0, 1.0]])
    return np.linalg.inv(m)[:2]


def apply_transform(matrix, points):
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


def crop_transform(center, side, out_hw):
    """Source -> output matrix for a square crop resampled to out_hw."""
    oh, ow = out_hw
    sx, sy = ow / side, oh / side
    tx = ow / 2.0 - center[0] * sx
    ty = oh / 2.0 - center[1] * sy
    return np.array([[sx, 0.0, tx], [0.0, sy, ty]], dtype=np.float64)


def augment_transform(center, rng, flip_prob=FLIP_PROB, scale_range=SCALE_RANGE,
                      rotation_deg=ROTATION_RANGE_DEG):
    """Random flip/scale/rotation about the person centre.

    Draws, in order: flip uniform, scale uniform, rotation uniform, so a
    seeded generator reproduces the exact sequence.

    Returns:
        (matrix, flipped): the source->source affine and the flip flag.
    """
    flipped = bool(rng.random() < flip_prob)
    s = rng.uniform(*scale_range)
    theta = np.deg2rad(rng.uniform(-rotation_deg, rotation_deg))
    cx, cy = float(center[0]), float(center[1])
    cos, sin = np.cos(theta), np.sin(theta)
    fx = -1.0 if flipped else 1.0
    # p -> center + R(theta) * s * F * (p - center)
    a, b = s * cos * fx, -s * sin
    c, d = s * sin * fx, s * cos
    return np.array([
        [a, b, cx - a * cx - b * cy],
        [c, d, cy - c * cx - d * cy],
    ], dtype=np.float64), flipped


def warp_image(image, matrix, out_hw):
    """Resample HWC source pixels through an output->source inverse map.

    ``matrix`` maps source -> output; sampling inverts it and reads the
    source bilinearly with edge clamping.
    """
    inv = invert(matrix)
    oh, ow = out_hw
    xs, ys = np.meshgrid(np.arange(ow, dtype=np.float64), np.arange(oh, dtype=np.float64))
    src = apply_transform(inv, np.stack([xs.ravel(), ys.ravel()], axis=1))
    return sample_bilinear(image, src[:, 0], src[:, 1]).reshape(oh, ow, -1)


def sample_bilinear(image, x, y):
    """Edge-clamped bilinear lookup at float coordinates; image is HWC."""
    h, w = image.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    img = image.reshape(h, w, -1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return (top * (1 - fy) + bottom * fy).astype(image.dtype)


def resize_image(image, out_hw):
    """Plain bilinear resize through the same warp machinery."""
    h, w = image.shape[:2]
    matrix = np.array([[out_hw[1] / w, 0.0, 0.0], [0.0, out_hw[0] / h, 0.0]])
    return warp_image(image, matrix, out_hw)


def prepare_sample(sample, out_hw, rng=None, augment=False, image_loader=None):
    """Crop (and optionally augment) one sample to network resolution.

    Returns:
        (image, keypoints, matrix): normalised CHW float32 image, (J, 3)
        keypoints in output pixels (joints left outside the crop or
        mirrored by a flip handled; invisible ones keep v = 0), and the
        full source->output affine used.
    """
    image = sample.image
    if image is None:
        loader = image_loader or load_image
        image = loader(sample.image_path)
    matrix = crop_transform(sample.center, sample.crop_side(), out_hw)
    flipped = False
    if augment:
        if rng is None:
            raise ValueError("augmentation needs an explicit numpy Generator")
        aug, flipped = augment_transform(sample.center, rng)
        matrix = compose(matrix, aug)
    warped = warp_image(image, matrix, out_hw)
    kps = sample.keypoints.copy()
    kps[:, :2] = apply_transform(matrix, kps[:, :2])
    if flipped:
        for a, b in FLIP_PAIRS:
            kps[[a, b]] = kps[[b, a]]
    oh, ow = out_hw
    outside = (kps[:, 0] < 0) | (kps[:, 0] > ow - 1) | (kps[:, 1] < 0) | (kps[:, 1] > oh - 1)
    kps[outside, 2] = 0.0
    chw = normalize_image(warped).transpose(2, 0, 1)
    return np.ascontiguousarray(chw), kps, matrix


def batches(samples, out_hw, batch_size, rng, augment=True, image_loader=None):
    """Yield (images, keypoints) batches for one epoch.

    Samples are shuffled with the given generator; a trailing remainder
    smaller than batch_size is dropped (unless it is the whole epoch).
    """
    order = rng.permutation(len(samples))
    if len(samples) < batch_size:
        chunks = [order]
    else:
        usable = (len(samples) // batch_size) * batch_size
        chunks = np.split(order[:usable], usable // batch_size)
    for chunk in chunks:
        xs, ks = [], []
        for idx in chunk:
            x, k, _ = prepare_sample(samples[idx], out_hw, rng=rng,
                                     augment=augment, image_loader=image_loader)
            xs.append(x)
            ks.append(k)
        yield np.stack(xs), np.stack(ks)
