"""EfficientPose: scalable single-person pose estimation, self-contained.

The package builds, trains and audits the EfficientPose model family
(RT, I, II, III, IV) on a small numpy-based autograd engine; no external
deep-learning framework is involved.
"""

__version__ = "0.1.0"
