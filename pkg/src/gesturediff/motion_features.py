"""Per-frame gesture feature representation and dataset standardization.

Each frame holds, per feature joint, its local rotation matrix (9, row-major)
and FK global position (3), followed by first and second time derivatives of
those values. Column layout:

    [ value block 12*J | velocity block 12*J | acceleration block 12*J ]

with 12 columns per joint inside each block. For the 62-joint challenge
skeleton this is 62 * (9+3) * 3 = 2232 columns.

Derivatives are finite differences of the value block scaled to per-second
units: central in the interior, one-sided at the boundaries. Feature joints
default to every articulated (non-End-Site) joint; a config may name an
explicit subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bvh import MotionSequence, Skeleton, forward_kinematics
from .rotations import orthonormalize, rotmat_to_euler

VALUES_PER_JOINT = 12  # 9 rotmat + 3 position
BLOCKS = 3  # value, velocity, acceleration


@dataclass(frozen=True)
class GestureFeatureSeq:
    frames: np.ndarray  # (T, BLOCKS * 12 * J)
    fps: int = 30

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[1] % (BLOCKS * VALUES_PER_JOINT) != 0:
            raise ValueError(f"feature width {frames.shape[1]} is not a multiple of 36")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def width(self) -> int:
        return self.frames.shape[1]

    @property
    def n_joints(self) -> int:
        return self.width // (BLOCKS * VALUES_PER_JOINT)

    def value_block(self) -> np.ndarray:
        return self.frames[:, : self.n_joints * VALUES_PER_JOINT]

    def velocity_block(self) -> np.ndarray:
        w = self.n_joints * VALUES_PER_JOINT
        return self.frames[:, w : 2 * w]

    def acceleration_block(self) -> np.ndarray:
        w = self.n_joints * VALUES_PER_JOINT
        return self.frames[:, 2 * w : 3 * w]


def _finite_differences(values: np.ndarray, fps: float) -> tuple[np.ndarray, np.ndarray]:
    """First/second time derivatives: central interior, one-sided boundaries."""
    vel = np.empty_like(values)
    vel[1:-1] = (values[2:] - values[:-2]) * (fps / 2.0)
    vel[0] = (values[1] - values[0]) * fps
    vel[-1] = (values[-1] - values[-2]) * fps

    acc = np.empty_like(values)
    acc[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) * fps**2
    acc[0] = (values[2] - 2.0 * values[1] + values[0]) * fps**2
    acc[-1] = (values[-1] - 2.0 * values[-2] + values[-3]) * fps**2
    return vel, acc


def feature_joint_indices(skeleton: Skeleton, feature_joints: list[str] | None = None) -> list[int]:
    """Resolve the feature joint subset; defaults to all articulated joints."""
    if feature_joints is None:
        return skeleton.articulated_indices()
    return [skeleton.joint_index(name) for name in feature_joints]


def extract_motion_features(
    skeleton: Skeleton,
    motion: MotionSequence,
    feature_joints: list[str] | None = None,
) -> GestureFeatureSeq:
    """Convert parsed motion to the per-frame gesture representation.

    Requires at least 3 frames (second derivatives are undefined below that).
    """
    if motion.n_frames < 3:
        raise ValueError(f"need at least 3 frames for derivatives, got {motion.n_frames}")

    indices = feature_joint_indices(skeleton, feature_joints)
    fk = forward_kinematics(skeleton, motion)

    t = motion.n_frames
    value = np.empty((t, len(indices) * VALUES_PER_JOINT))
    for col, idx in enumerate(indices):
        base = col * VALUES_PER_JOINT
        value[:, base : base + 9] = fk.local_rotations[:, idx].reshape(t, 9)
        value[:, base + 9 : base + 12] = fk.positions[:, idx]

    vel, acc = _finite_differences(value, motion.fps)
    return GestureFeatureSeq(frames=np.hstack([value, vel, acc]), fps=motion.fps)


def features_to_motion(
    features: GestureFeatureSeq,
    skeleton: Skeleton,
    feature_joints: list[str] | None = None,
) -> MotionSequence:
    """Reconstruct playable motion from (de-standardized) features.

    Rotmat blocks are projected to the nearest rotation before Euler
    conversion; the root position comes from the root's global-position
    columns; derivative blocks are ignored.
    """
    if not np.all(np.isfinite(features.frames)):
        raise ValueError("non-finite feature values")

    indices = feature_joint_indices(skeleton, feature_joints)
    if len(indices) != features.n_joints:
        raise ValueError(
            f"features carry {features.n_joints} joints, skeleton subset has {len(indices)}"
        )

    t = features.n_frames
    value = features.value_block()
    channels = np.zeros((t, skeleton.n_channels))
    for col, idx in enumerate(indices):
        joint = skeleton.joints[idx]
        base = col * VALUES_PER_JOINT
        rot = orthonormalize(value[:, base : base + 9].reshape(t, 3, 3))
        euler = rotmat_to_euler(rot, joint.rotation_order)
        sl = skeleton.channel_slice(idx)
        rot_cols = [sl.start + c for c, lbl in enumerate(joint.channel_labels)
                    if lbl.endswith("rotation")]
        channels[:, rot_cols] = euler
        if joint.parent_index is None:
            pos = value[:, base + 9 : base + 12]
            for c, lbl in enumerate(joint.channel_labels):
                if lbl.endswith("position"):
                    channels[:, sl.start + c] = pos[:, "XYZ".index(lbl[0])]
    return MotionSequence(fps=features.fps, frames=channels)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension zero-mean unit-variance mapping fit on a corpus."""

    mean: np.ndarray
    std: np.ndarray  # floored at 1e-8, strictly positive

    STD_FLOOR = 1e-8

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def fit_standardizer(corpus: list[GestureFeatureSeq]) -> Standardizer:
    """Per-dimension mean/std over all frames of all sequences."""
    if not corpus:
        raise ValueError("cannot fit a standardizer on an empty corpus")
    stacked = np.vstack([seq.frames for seq in corpus])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.maximum(std, Standardizer.STD_FLOOR)
    return Standardizer(mean=mean, std=std)
