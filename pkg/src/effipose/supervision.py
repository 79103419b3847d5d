"""Training targets: keypoint confidence maps and part affinity fields.

Joint order and skeleton follow the 16-joint MPII convention. Confidence
targets are unnormalised Gaussians exp(-d^2 / sigma^2): value 1 at the
keypoint's grid cell and exp(-1) at distance sigma. Part affinity fields
store the limb's unit direction vector on every grid point within a
half-width band around the segment. Sigma decays stepwise over training
and is expressed on the stride-8 grid; heads at other resolutions scale
it proportionally.
"""

import numpy as np

JOINT_NAMES = (
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle",
    "pelvis", "thorax", "upper_neck", "head_top",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
)
NUM_JOINTS = len(JOINT_NAMES)

FLIP_PAIRS = ((0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13))

# Tree over the 16 joints: head chain, both legs off the pelvis, both arms
# off the thorax. 15 edges = one affinity field pair per limb.
SKELETON = (
    (9, 8), (8, 7), (7, 6),
    (6, 2), (2, 1), (1, 0),
    (6, 3), (3, 4), (4, 5),
    (7, 12), (12, 11), (11, 10),
    (7, 13), (13, 14), (14, 15),
)
NUM_LIMBS = len(SKELETON)


class SigmaSchedule:
    """Stepwise sigma decay: list of (start_epoch, sigma) with start 0 first."""

    DEFAULT = ((0, 4.0), (50, 3.0), (100, 2.0))

    def __init__(self, steps=DEFAULT):
        steps = tuple((float(e), float(s)) for e, s in steps)
        if not steps or steps[0][0] != 0:
            raise ValueError("sigma schedule must start at epoch 0")
        if any(b[0] <= a[0] for a, b in zip(steps, steps[1:])):
            raise ValueError("sigma schedule epochs must increase strictly")
        if any(s <= 0 for _, s in steps):
            raise ValueError("sigma values must be positive")
        self.steps = steps

    def base_at(self, epoch):
        """Sigma on the stride-8 grid at a (possibly fractional) epoch."""
        value = self.steps[0][1]
        for start, sigma in self.steps:
            if epoch >= start:
                value = sigma
        return value

    def at(self, epoch, out_size, stride8_size):
        """Sigma for a head of ``out_size``, proportional to resolution."""
        return self.base_at(epoch) * (out_size / stride8_size)

    @property
    def total_drop(self):
        """sigma_0 - sigma_inf, used by the learning-rate floor."""
        return self.steps[0][1] - self.steps[-1][1]

    @classmethod
    def parse(cls, text):
        """Parse '0:4,50:3,100:2'."""
        steps = []
        for part in text.split(","):
            epoch, _, sigma = part.partition(":")
            steps.append((float(epoch), float(sigma)))
        return cls(steps)

    def format(self):
        return ",".join(f"{e:g}:{s:g}" for e, s in self.steps)


def to_grid(points, in_size, out_size):
    """Map source pixel coordinates to (fractional) grid coordinates."""
    return np.asarray(points, dtype=np.float64) * (out_size / in_size)


def snap_to_grid(gx, gy, width, height):
    """Nearest grid centre, clipped to the map."""
    return (int(np.clip(round(gx), 0, width - 1)),
            int(np.clip(round(gy), 0, height - 1)))


def confidence_map(height, width, gx, gy, sigma):
    """Gaussian exp(-((x-gx)^2 + (y-gy)^2) / sigma^2) over the grid."""
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    d2 = (xs - gx) ** 2 + (ys - gy) ** 2
    return np.exp(-d2 / (sigma * sigma)).astype(np.float32)


def keypoint_maps(keypoints, in_hw, out_hw, sigma):
    """One confidence map per joint; invisible joints give all-zero maps.

    Args:
        keypoints: (J, 3) array of x, y, visibility in source pixels.
        in_hw: source (height, width).
        out_hw: map (height, width).
        sigma: Gaussian width in grid cells.
    """
    h, w = out_hw
    maps = np.zeros((len(keypoints), h, w), dtype=np.float32)
    for j, (x, y, v) in enumerate(np.asarray(keypoints, dtype=np.float64)):
        if v <= 0:
            continue
        gx, gy = snap_to_grid(x * w / in_hw[1], y * h / in_hw[0], w, h)
        maps[j] = confidence_map(h, w, gx, gy, sigma)
    return maps


def paf_maps(keypoints, in_hw, out_hw, half_width=1.0, skeleton=SKELETON):
    """Part affinity fields: channels (2i, 2i+1) hold limb i's unit vector.

    A grid point receives the vector when its projection onto the limb
    segment falls within [0, length] and its perpendicular distance is at
    most ``half_width``; everywhere else the field is zero.
    """
    h, w = out_hw
    kps = np.asarray(keypoints, dtype=np.float64)
    maps = np.zeros((2 * len(skeleton), h, w), dtype=np.float32)
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    for i, (a, b) in enumerate(skeleton):
        if kps[a, 2] <= 0 or kps[b, 2] <= 0:
            continue
        ax, ay = kps[a, 0] * w / in_hw[1], kps[a, 1] * h / in_hw[0]
        bx, by = kps[b, 0] * w / in_hw[1], kps[b, 1] * h / in_hw[0]
        dx, dy = bx - ax, by - ay
        length = np.hypot(dx, dy)
        if length < 1e-9:
            continue
        ux, uy = dx / length, dy / length
        along = (xs - ax) * ux + (ys - ay) * uy
        perp = np.abs((xs - ax) * uy - (ys - ay) * ux)
        band = (along >= 0) & (along <= length) & (perp <= half_width)
        maps[2 * i][band] = ux
        maps[2 * i + 1][band] = uy
    return maps


def build_targets(keypoints_batch, config, out_shapes, epoch, schedule, in_hw=None, paf_half_width=1.0):
    """Targets for every supervised head of a built variant.

    Args:
        keypoints_batch: (N, J, 3) source-pixel keypoints.
        config: VariantConfig (pass layout, P, Q).
        out_shapes: model.out_shapes, one (C, h, w) per head.
        epoch: fractional epoch for the sigma schedule.
        schedule: SigmaSchedule.
        in_hw: source resolution; defaults to config.high_res.
        paf_half_width: affinity band half-width on the stride-8 grid.

    Returns:
        List of (N, C, h, w) float32 arrays aligned with the model outputs.
    """
    if in_hw is None:
        in_hw = tuple(config.high_res)
    kps = np.asarray(keypoints_batch, dtype=np.float64)
    stride8 = out_shapes[0][1]
    targets = []
    for head, (c, h, w) in enumerate(out_shapes):
        is_paf = config.skeleton_pass and head == 0
        batch = np.zeros((len(kps), c, h, w), dtype=np.float32)
        if is_paf:
            width = paf_half_width * (h / stride8)
            for n in range(len(kps)):
                batch[n] = paf_maps(kps[n], in_hw, (h, w), width)
        else:
            sigma = schedule.at(epoch, h, stride8)
            for n in range(len(kps)):
                batch[n] = keypoint_maps(kps[n], in_hw, (h, w), sigma)
        targets.append(batch)
    return targets
