"""Long-form gesture synthesis: per-clip reverse diffusion, seed handoff
between clips, style guidance, and BVH emission.

Clips are sequentially dependent (each inherits the previous clip's last 30
generated frames as its seed), so a request runs single-threaded; separate
requests can run concurrently with their own generators against shared
read-only parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .bvh import MotionSequence, Skeleton, write_bvh
from .denoiser import Conditioning, GestureDenoiser
from .diffusion import NoiseSchedule, posterior_step
from .motion_features import GestureFeatureSeq, Standardizer, features_to_motion
from .speech_features import speaker_onehot
from .training import PRED_LEN, SEED_LEN


def guided_denoise(
    model: GestureDenoiser,
    x_t: torch.Tensor,
    t: int,
    cond: Conditioning,
    guidance_scale: float = 0.0,
) -> torch.Tensor:
    """Classifier-free style guidance on the speaker condition.

    Returns (1 + g) * Denoise(cond) - g * Denoise(cond with speaker masked);
    g = 0 is purely conditional, g = -1 purely speaker-masked.
    """
    if guidance_scale < -1.0:
        raise ValueError(f"guidance scale must be >= -1, got {guidance_scale}")
    conditional = model(x_t, t, cond)
    if guidance_scale == 0.0:
        return conditional
    unconditional = model(x_t, t, cond.with_speaker_masked())
    return (1.0 + guidance_scale) * conditional - guidance_scale * unconditional


def reverse_loop(
    denoise_fn,
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    rng: torch.Generator,
    zero_noise: bool = False,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Run the full reverse process from x_T ~ N(0, I) down to x_0.

    denoise_fn(x_t, t) must return the x0 prediction. With zero_noise the
    posterior mean is followed deterministically at every step.
    """
    x = torch.randn(shape, generator=rng, dtype=dtype)
    for t in range(schedule.t_max, 0, -1):
        x0_hat = denoise_fn(x, t)
        fresh = None if zero_noise else torch.randn(shape, generator=rng, dtype=dtype)
        x = posterior_step(x, x0_hat, t, fresh, schedule)
    return x


def sample_clip(
    model: GestureDenoiser,
    schedule: NoiseSchedule,
    cond: Conditioning,
    rng: torch.Generator,
    guidance_scale: float = 0.0,
    zero_noise: bool = False,
) -> np.ndarray:
    """Sample one standardized gesture clip (n_seed + n_pred, feature_dim)."""
    if cond.batch_size != 1:
        raise ValueError("sample_clip expects a batch of one")
    length = cond.seed.shape[1] + cond.audio.shape[1]
    shape = (1, length, model.config.feature_dim)
    with torch.no_grad():
        x0 = reverse_loop(
            lambda x, t: guided_denoise(model, x, t, cond, guidance_scale),
            schedule, shape, rng, zero_noise=zero_noise,
        )
    out = x0[0].numpy()
    if not np.all(np.isfinite(out)):
        raise RuntimeError("non-finite values in sampled clip")
    return out


@dataclass(frozen=True)
class GenerationRequest:
    audio: np.ndarray  # (N, 1133) full-length conditioning
    text: np.ndarray  # (N, 302)
    speaker: np.ndarray  # one-hot 17-vector (or pass an int to from_speaker_id)
    initial_seed: np.ndarray | None = None  # (30, feature_dim), standardized
    guidance_scale: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        audio = np.asarray(self.audio, dtype=np.float64)
        text = np.asarray(self.text, dtype=np.float64)
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "text", text)
        if audio.shape[0] == 0:
            raise ValueError("empty audio conditioning")
        if text.shape[0] != audio.shape[0]:
            raise ValueError(
                f"audio has {audio.shape[0]} rows, text has {text.shape[0]}"
            )
        if self.initial_seed is not None and self.initial_seed.shape[0] != SEED_LEN:
            raise ValueError(f"initial seed must have exactly {SEED_LEN} rows")
        if self.guidance_scale < -1.0:
            raise ValueError("guidance scale must be >= -1")

    @staticmethod
    def from_speaker_id(audio, text, speaker_id: int, **kwargs) -> "GenerationRequest":
        return GenerationRequest(audio=audio, text=text,
                                 speaker=speaker_onehot(speaker_id), **kwargs)


@dataclass
class GenerationResult:
    motion: MotionSequence
    bvh_text: str
    features: np.ndarray  # (N, feature_dim), standardized domain


def generate_long(
    request: GenerationRequest,
    model: GestureDenoiser,
    schedule: NoiseSchedule,
    standardizer: Standardizer,
    skeleton: Skeleton,
    feature_joints: list[str] | None = None,
    blend_frames: int = 0,
) -> GenerationResult:
    """Synthesize gestures for arbitrarily long conditioning.

    Audio/text are consumed in consecutive 120-frame segments (the final
    partial segment is zero-padded, output truncated afterwards). Clip 1 uses
    the request seed (mean pose when absent); every later clip is seeded with
    the last 30 frames generated for its predecessor, and only the last 120
    frames of each clip are emitted.

    blend_frames > 0 additionally crossfades each clip boundary with the next
    clip's re-prediction of the overlap region (off by default: seed
    conditioning alone carries the transition).
    """
    feature_dim = model.config.feature_dim
    n = request.audio.shape[0]
    n_segments = int(np.ceil(n / PRED_LEN))
    pad = n_segments * PRED_LEN - n
    audio = np.vstack([request.audio, np.zeros((pad, request.audio.shape[1]))])
    text = np.vstack([request.text, np.zeros((pad, request.text.shape[1]))])

    seed = request.initial_seed
    if seed is None:
        seed = np.zeros((SEED_LEN, feature_dim))  # standardized mean pose

    rng = torch.Generator().manual_seed(request.rng_seed)
    emitted: list[np.ndarray] = []
    for k in range(n_segments):
        segment = slice(k * PRED_LEN, (k + 1) * PRED_LEN)
        cond = Conditioning.single(seed, audio[segment], text[segment], request.speaker)
        clip = sample_clip(model, schedule, cond, rng,
                           guidance_scale=request.guidance_scale)
        if blend_frames > 0 and emitted:
            w = np.linspace(0.0, 1.0, blend_frames + 2)[1:-1, None]
            overlap = clip[SEED_LEN - blend_frames : SEED_LEN]
            emitted[-1][-blend_frames:] = (
                (1.0 - w) * emitted[-1][-blend_frames:] + w * overlap
            )
        emitted.append(clip[SEED_LEN:])
        seed = clip[-SEED_LEN:]

    features = np.vstack(emitted)[:n]
    destandardized = standardizer.invert(features)
    motion = features_to_motion(
        GestureFeatureSeq(frames=destandardized, fps=30), skeleton, feature_joints
    )
    return GenerationResult(motion=motion, bvh_text=write_bvh(skeleton, motion),
                            features=features)
