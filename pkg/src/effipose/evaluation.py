"""Keypoint decoding, PCKh scoring and multi-scale test-time inference.

PCKh declares a predicted joint correct when its distance to the
annotation is at most tau * 0.6 * head-box diagonal (inclusive). Results
are grouped head/shoulder/elbow/wrist/hip/knee/ankle; the mean is the
visibility-weighted mean over the grouped joints.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import apply_transform, invert, prepare_sample, warp_image
from .layers import RunContext
from .supervision import FLIP_PAIRS, NUM_JOINTS

PCKH_GROUPS = {
    "head": (8, 9),
    "shoulder": (12, 13),
    "elbow": (11, 14),
    "wrist": (10, 15),
    "hip": (2, 3),
    "knee": (1, 4),
    "ankle": (0, 5),
}
HEAD_DIAG_FACTOR = 0.6


def decode_keypoints(maps, src_hw):
    """Peak locations of confidence maps in source-pixel coordinates.

    The argmax cell (first in row-major order on ties) is refined by a
    quarter-cell shift toward a strictly larger horizontal/vertical
    neighbour. An all-zero map decodes to the image centre with score 0.

    Args:
        maps: (J, h, w) array.
        src_hw: source (height, width) the grid maps back to.

    Returns:
        (J, 3) array of x, y, score.
    """
    maps = np.asarray(maps)
    j, h, w = maps.shape
    sy, sx = src_hw[0] / h, src_hw[1] / w
    out = np.zeros((j, 3), dtype=np.float64)
    for i in range(j):
        m = maps[i]
        if not m.any():
            out[i] = (src_hw[1] / 2.0, src_hw[0] / 2.0, 0.0)
            continue
        idx = int(np.argmax(m))
        gy, gx = divmod(idx, w)
        dx = dy = 0.0
        if 0 < gx < w - 1:
            if m[gy, gx + 1] > m[gy, gx - 1]:
                dx = 0.25
            elif m[gy, gx - 1] > m[gy, gx + 1]:
                dx = -0.25
        if 0 < gy < h - 1:
            if m[gy + 1, gx] > m[gy - 1, gx]:
                dy = 0.25
            elif m[gy - 1, gx] > m[gy + 1, gx]:
                dy = -0.25
        out[i] = ((gx + dx) * sx, (gy + dy) * sy, float(m[gy, gx]))
    return out


@dataclass
class EvalReport:
    """PCKh percentages per group and overall, per threshold."""

    taus: tuple
    groups: dict          # tau -> {group: percentage}
    mean: dict            # tau -> percentage
    joint_correct: dict   # tau -> (J,) correct counts
    joint_visible: np.ndarray
    samples: int
    skipped: int

    def table(self):
        names = list(PCKH_GROUPS) + ["mean"]
        lines = ["tau   " + " ".join(f"{n:>9}" for n in names)]
        for tau in self.taus:
            row = [f"{self.groups[tau][g]:9.1f}" for g in PCKH_GROUPS]
            row.append(f"{self.mean[tau]:9.1f}")
            lines.append(f"{tau:<5g} " + " ".join(row))
        lines.append(f"samples: {self.samples} (skipped: {self.skipped})")
        return "\n".join(lines)


def head_diagonal(head_box):
    x1, y1, x2, y2 = np.asarray(head_box, dtype=np.float64)
    return float(np.hypot(x2 - x1, y2 - y1))


def pckh(predictions, keypoints, head_boxes, taus=(0.5, 0.1)):
    """Score predictions against annotations.

    Args:
        predictions: (S, J, >=2) predicted x, y per joint.
        keypoints: (S, J, 3) annotated x, y, visibility.
        head_boxes: (S, 4) x1, y1, x2, y2.
        taus: thresholds as fractions of 0.6 * head diagonal.

    Samples with a degenerate head box (diagonal not finite or zero) are
    excluded and counted in the report's ``skipped`` field.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    keypoints = np.asarray(keypoints, dtype=np.float64)
    head_boxes = np.asarray(head_boxes, dtype=np.float64)
    taus = tuple(taus)
    correct = {tau: np.zeros(NUM_JOINTS) for tau in taus}
    visible = np.zeros(NUM_JOINTS)
    used = skipped = 0
    for pred, gt, box in zip(predictions, keypoints, head_boxes):
        diag = head_diagonal(box)
        if not np.isfinite(diag) or diag <= 0:
            skipped += 1
            continue
        used += 1
        reach = HEAD_DIAG_FACTOR * diag
        vis = gt[:, 2] > 0
        visible += vis
        dist = np.hypot(pred[:, 0] - gt[:, 0], pred[:, 1] - gt[:, 1])
        for tau in taus:
            correct[tau] += vis & (dist <= tau * reach)

    grouped_ids = [j for ids in PCKH_GROUPS.values() for j in ids]
    groups, mean = {}, {}
    for tau in taus:
        groups[tau] = {}
        for name, ids in PCKH_GROUPS.items():
            v = visible[list(ids)].sum()
            groups[tau][name] = 100.0 * correct[tau][list(ids)].sum() / v if v else 0.0
        v = visible[grouped_ids].sum()
        mean[tau] = 100.0 * correct[tau][grouped_ids].sum() / v if v else 0.0
    return EvalReport(taus=taus, groups=groups, mean=mean,
                      joint_correct=correct, joint_visible=visible,
                      samples=used, skipped=skipped)


def _zoom_matrix(hw, factor):
    """Source -> output affine magnifying content by ``factor`` about centre."""
    cy, cx = (hw[0] - 1) / 2.0, (hw[1] - 1) / 2.0
    return np.array([
        [factor, 0.0, cx - factor * cx],
        [0.0, factor, cy - factor * cy],
    ], dtype=np.float64)


def _final_maps(model, x):
    with T.no_grad():
        outputs = model.forward(T.Tensor(x[None]), RunContext(mode="infer"))
    return outputs[-1].data[0]


def multi_scale_inference(model, image, scales=(1.0,), flip=False):
    """Average final keypoint maps over content scales and a mirror pass.

    Args:
        model: built PoseModel.
        image: normalised CHW float32 input at the model resolution.
        scales: content zoom factors (1.0 runs the image as-is).
        flip: also run the mirrored input, un-mirroring the maps and
            swapping left/right channels before averaging.

    Returns:
        (Q, h, w) averaged maps in the unzoomed, unflipped frame.
    """
    image = np.asarray(image, dtype=np.float32)
    in_hw = image.shape[1:]
    total = None
    runs = 0
    for s in scales:
        for mirrored in ((False, True) if flip else (False,)):
            x = image
            if mirrored:
                x = x[:, :, ::-1]
            if s != 1.0:
                hwc = x.transpose(1, 2, 0)
                x = warp_image(hwc, _zoom_matrix(in_hw, s), in_hw).transpose(2, 0, 1)
            maps = _final_maps(model, np.ascontiguousarray(x))
            if mirrored:
                maps = maps[:, :, ::-1]
                for a, b in FLIP_PAIRS:
                    maps[[a, b]] = maps[[b, a]]
            if s != 1.0:
                mh, mw = maps.shape[1:]
                unzoom = invert(_zoom_matrix((mh, mw), s))
                maps = warp_image(maps.transpose(1, 2, 0), unzoom, (mh, mw)).transpose(2, 0, 1)
            total = maps.astype(np.float64) if total is None else total + maps
            runs += 1
    return (total / runs).astype(np.float32)


def predict_sample(model, sample, scales=(1.0,), flip=False, image_loader=None):
    """Decode one annotated sample back into original image coordinates."""
    in_hw = tuple(model.config.high_res)
    x, _, matrix = prepare_sample(sample, in_hw, augment=False, image_loader=image_loader)
    maps = multi_scale_inference(model, x, scales=scales, flip=flip)
    decoded = decode_keypoints(maps, in_hw)
    decoded[:, :2] = apply_transform(invert(matrix), decoded[:, :2])
    return decoded


def evaluate_samples(model, samples, scales=(1.0,), flip=False,
                     taus=(0.5, 0.1), image_loader=None):
    """Run inference over annotated samples and score PCKh."""
    preds = [predict_sample(model, s, scales=scales, flip=flip,
                            image_loader=image_loader) for s in samples]
    gts = np.stack([s.keypoints for s in samples])
    boxes = np.stack([s.head_box for s in samples])
    return pckh(np.stack(preds), gts, boxes, taus=taus)


def write_predictions(path, image_paths, predictions):
    """One line per sample: image path then x,y,score for every keypoint."""
    predictions = np.asarray(predictions)
    with open(path, "w", encoding="utf-8") as fh:
        for image_path, row in zip(image_paths, predictions):
            values = " ".join(f"{v:.4f}" for v in row.reshape(-1))
            fh.write(f"{image_path} {values}\n")


def read_predictions(path, num_keypoints=16):
    """Parse a prediction file back into paths and a (N, Q, 3) array."""
    paths, rows = [], []
    width = 3 * num_keypoints
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 1 + width:
                raise ValueError(
                    f"{path}:{lineno}: expected image path plus {width} values, got {len(fields)} fields")
            paths.append(fields[0])
            try:
                values = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            rows.append(np.asarray(values, dtype=np.float32).reshape(num_keypoints, 3))
    return paths, np.stack(rows) if rows else np.zeros((0, num_keypoints, 3), np.float32)
