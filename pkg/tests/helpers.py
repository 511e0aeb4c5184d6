"""Shared builders for synthetic skeletons, motions, and training corpora."""

from __future__ import annotations

import numpy as np
import torch

from gesturediff.bvh import Joint, MotionSequence, Skeleton
from gesturediff.denoiser import Conditioning, DenoiserConfig
from gesturediff.motion_features import extract_motion_features
from gesturediff.speech_features import AUDIO_DIM, TEXT_DIM, speaker_onehot
from gesturediff.training import CLIP_LEN, PRED_LEN, SEED_LEN, TrainClip

ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


def chain_skeleton(n_joints: int, end_site: bool = True) -> Skeleton:
    """A kinematic chain of n_joints articulated joints plus one End Site."""
    joints = [Joint("root", None, np.zeros(3), ROOT_CHANNELS)]
    for i in range(1, n_joints):
        offset = np.array([1.0 + 0.1 * (i % 3), 0.25 * (i % 2), 0.0])
        joints.append(Joint(f"joint{i}", i - 1, offset, JOINT_CHANNELS))
    if end_site:
        joints.append(Joint(joints[-1].name + "_end", n_joints - 1, np.array([0.5, 0.0, 0.0]),
                            (), is_end_site=True))
    return Skeleton(tuple(joints))


def challenge_like_skeleton() -> Skeleton:
    """62 articulated joints (the challenge body count) in a branching tree."""
    joints = [Joint("root", None, np.zeros(3), ROOT_CHANNELS)]
    for i in range(1, 62):
        parent = (i - 1) // 2  # binary tree keeps parents before children
        offset = np.array([1.0, 0.2 * (i % 4), 0.1 * (i % 3)])
        joints.append(Joint(f"joint{i}", parent, offset, JOINT_CHANNELS))
    joints.append(Joint("joint61_end", 61, np.array([0.3, 0.0, 0.0]), (), is_end_site=True))
    return Skeleton(tuple(joints))


def random_motion(skeleton: Skeleton, n_frames: int, rng: np.random.Generator,
                  max_angle: float = 30.0, fps: int = 30) -> MotionSequence:
    """Smooth small-angle random motion with a wandering root."""
    base = rng.uniform(-max_angle, max_angle, size=skeleton.n_channels)
    phase = rng.uniform(0, 2 * np.pi, size=skeleton.n_channels)
    speed = rng.uniform(0.5, 2.0, size=skeleton.n_channels)
    t = np.arange(n_frames)[:, None] / fps
    frames = base * np.sin(speed * t + phase)
    frames[:, 0:3] = rng.normal(0, 5, size=3) + 2.0 * np.sin(0.7 * t + phase[:3])
    return MotionSequence(fps=fps, frames=frames)


def synthetic_clips(n_clips: int, seed: int = 0, feature_dim: int | None = None,
                    n_speakers: int = 3) -> list[TrainClip]:
    """Standardized-looking training clips with smooth structure plus noise."""
    from gesturediff.motion_features import fit_standardizer, GestureFeatureSeq

    if feature_dim is None:
        skeleton = chain_skeleton(8)
        rng = np.random.default_rng(seed)
        seqs = [extract_motion_features(skeleton, random_motion(skeleton, CLIP_LEN, rng))
                for _ in range(n_clips)]
        std = fit_standardizer(seqs)
        gestures = [std.apply(s.frames) for s in seqs]
        feature_dim = gestures[0].shape[1]
    else:
        rng = np.random.default_rng(seed)
        t = np.arange(CLIP_LEN)[:, None] / 30.0
        gestures = []
        for _ in range(n_clips):
            freq = rng.uniform(0.5, 3.0, size=feature_dim)
            phase = rng.uniform(0, 2 * np.pi, size=feature_dim)
            gestures.append(np.sin(freq * t + phase) + 0.1 * rng.standard_normal((CLIP_LEN, feature_dim)))

    rng2 = np.random.default_rng(seed + 1)
    clips = []
    for g in gestures:
        clips.append(TrainClip(
            gesture=np.asarray(g, dtype=np.float64),
            audio=rng2.standard_normal((PRED_LEN, AUDIO_DIM)) * 0.5,
            text=rng2.standard_normal((PRED_LEN, TEXT_DIM)) * 0.5,
            speaker=speaker_onehot(int(rng2.integers(0, n_speakers))),
        ))
    return clips


def tiny_config(**overrides) -> DenoiserConfig:
    """Reduced-width config for gradient checks and fast probes."""
    base = dict(
        feature_dim=12, audio_dim=7, text_dim=5, speaker_dim=3,
        latent_dim=16, local_heads=2, local_channels_per_head=4, window=4,
        self_layers=1, self_heads=2, dropout=0.0, n_seed=8, n_pred=16,
        ff_mult=2, self_rpe_max_offset=24,
    )
    base.update(overrides)
    return DenoiserConfig(**base)


def random_conditioning(config: DenoiserConfig, batch: int, rng: np.random.Generator,
                        dtype=torch.float32) -> Conditioning:
    as_t = lambda a: torch.as_tensor(a, dtype=dtype)
    speaker = np.zeros((batch, config.speaker_dim))
    speaker[np.arange(batch), rng.integers(0, config.speaker_dim, size=batch)] = 1.0
    return Conditioning(
        seed=as_t(rng.standard_normal((batch, config.n_seed, config.feature_dim))),
        audio=as_t(rng.standard_normal((batch, config.n_pred, config.audio_dim))),
        text=as_t(rng.standard_normal((batch, config.n_pred, config.text_dim))),
        speaker=as_t(speaker),
        mask_speaker=torch.zeros(batch, dtype=torch.bool),
        mask_seed=torch.zeros(batch, dtype=torch.bool),
    )
