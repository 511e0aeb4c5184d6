"""Dataset windowing, denoiser training, and the conditioning-layout
ablation harness.

Training clips are 150 frames at 30 fps: the first 30 are the seed gesture
fed as conditioning, the last 120 are the prediction target and the only
frames the loss sees. Audio/text conditioning aligns with those last 120
frames. Everything is deterministic given the settings seed: batch choice,
noising steps, noise, condition masks, and dropout all draw from one
explicitly seeded generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .denoiser import (
    AblationLayout,
    Conditioning,
    DenoiserConfig,
    GestureDenoiser,
    apply_condition_masks,
)
from .diffusion import NoiseSchedule, cosine_schedule, huber_loss, q_sample
from .motion_features import GestureFeatureSeq, Standardizer, fit_standardizer
from .speech_features import AudioFeatureSeq, TextFeatureSeq

log = logging.getLogger(__name__)

CLIP_LEN = 150
SEED_LEN = 30
PRED_LEN = 120


@dataclass(frozen=True)
class Session:
    """One recording with frame-aligned features (all at 30 fps)."""

    gesture: GestureFeatureSeq
    audio: AudioFeatureSeq
    text: TextFeatureSeq
    speaker: np.ndarray  # one-hot 17-vector

    def __post_init__(self):
        n = self.gesture.n_frames
        if self.audio.n_frames != n or self.text.n_frames != n:
            raise ValueError(
                f"session features disagree on frame count: gesture {n}, "
                f"audio {self.audio.n_frames}, text {self.text.n_frames}"
            )


@dataclass(frozen=True)
class TrainClip:
    gesture: np.ndarray  # (150, feature_dim), standardized
    audio: np.ndarray  # (120, 1133)
    text: np.ndarray  # (120, 302)
    speaker: np.ndarray  # (17,)

    def __post_init__(self):
        if self.gesture.shape[0] != CLIP_LEN:
            raise ValueError(f"gesture clip must have {CLIP_LEN} rows, got {self.gesture.shape[0]}")
        if self.audio.shape[0] != PRED_LEN or self.text.shape[0] != PRED_LEN:
            raise ValueError(f"audio/text must cover the last {PRED_LEN} frames")

    @property
    def seed(self) -> np.ndarray:
        return self.gesture[:SEED_LEN]


def window_dataset(
    sessions: list[Session],
    stride: int = 30,
    standardizer: Standardizer | None = None,
) -> tuple[list[TrainClip], Standardizer]:
    """Slice sessions into standardized 150-frame training clips.

    Sessions shorter than one window are skipped with a warning. When no
    standardizer is given, one is fit on the gesture features of all usable
    sessions first.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    usable = []
    for i, session in enumerate(sessions):
        if session.gesture.n_frames < CLIP_LEN:
            log.warning(
                "session %d has %d frames (< %d), skipped",
                i, session.gesture.n_frames, CLIP_LEN,
            )
            continue
        usable.append(session)

    if standardizer is None:
        if not usable:
            raise ValueError("no session is long enough to window")
        standardizer = fit_standardizer([s.gesture for s in usable])

    clips = []
    for session in usable:
        gesture = standardizer.apply(session.gesture.frames)
        for start in range(0, session.gesture.n_frames - CLIP_LEN + 1, stride):
            clips.append(TrainClip(
                gesture=gesture[start : start + CLIP_LEN],
                audio=session.audio.frames[start + SEED_LEN : start + CLIP_LEN],
                text=session.text.frames[start + SEED_LEN : start + CLIP_LEN],
                speaker=session.speaker,
            ))
    return clips, standardizer


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 300
    batch_size: int = 8
    lr: float = 3e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    p_mask: float = 0.1
    mask_seed: bool = False
    t_max: int = 50
    huber_delta: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    model: GestureDenoiser
    schedule: NoiseSchedule
    losses: np.ndarray  # (steps,)
    layout: AblationLayout = AblationLayout.SPLIT


def _stack_clips(clips: list[TrainClip]) -> tuple[torch.Tensor, ...]:
    to_t = lambda arrs: torch.as_tensor(np.stack(arrs), dtype=torch.float32)
    return (
        to_t([c.gesture for c in clips]),
        to_t([c.audio for c in clips]),
        to_t([c.text for c in clips]),
        to_t([c.speaker for c in clips]),
    )


def prediction_loss(x0: torch.Tensor, x0_hat: torch.Tensor, n_seed: int = SEED_LEN,
                    delta: float = 1.0) -> torch.Tensor:
    """Huber loss restricted to the predicted (post-seed) frames."""
    return huber_loss(x0[:, n_seed:], x0_hat[:, n_seed:], delta=delta)


def train(
    clips: list[TrainClip],
    config: DenoiserConfig,
    settings: TrainSettings,
    layout: AblationLayout = AblationLayout.SPLIT,
) -> TrainResult:
    """Train a denoiser with decoupled weight decay; returns the loss curve.

    Aborts with the failing step index if the loss goes non-finite.
    """
    if not clips:
        raise ValueError("no training clips")
    config = replace(config, layout=layout)
    model = GestureDenoiser(config, init_seed=settings.seed)
    schedule = cosine_schedule(settings.t_max)
    gestures, audio, text, speakers = _stack_clips(clips)
    n_clips = gestures.shape[0]

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=settings.lr, betas=settings.betas,
        eps=settings.eps, weight_decay=settings.weight_decay,
    )
    rng = torch.Generator().manual_seed(settings.seed)

    losses = np.zeros(settings.steps)
    for step in range(settings.steps):
        idx = torch.randint(0, n_clips, (settings.batch_size,), generator=rng)
        x0 = gestures[idx]
        t = torch.randint(1, settings.t_max + 1, (settings.batch_size,), generator=rng)
        eps = torch.randn(x0.shape, generator=rng)
        x_t = q_sample(x0, t, eps, schedule)

        cond = Conditioning(
            seed=x0[:, :SEED_LEN],
            audio=audio[idx],
            text=text[idx],
            speaker=speakers[idx],
            mask_speaker=torch.zeros(settings.batch_size, dtype=torch.bool),
            mask_seed=torch.zeros(settings.batch_size, dtype=torch.bool),
        )
        cond = apply_condition_masks(cond, settings.p_mask, rng, include_seed=settings.mask_seed)

        try:
            x0_hat = model(x_t, t, cond, dropout_rng=rng)
        except RuntimeError as exc:
            raise RuntimeError(f"training aborted at step {step}: {exc}") from exc
        loss = prediction_loss(x0, x0_hat, n_seed=SEED_LEN, delta=settings.huber_delta)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at step {step}")

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses[step] = loss.item()

    model.eval()
    return TrainResult(model=model, schedule=schedule, losses=losses, layout=layout)


def write_loss_curve(path: str | Path, losses: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, value in enumerate(losses):
            fh.write(f"{step},{value:.8f}\n")


# Full-scale results published for this conditioning-layout comparison on the
# GENEA 2023 data (feature-space FGD, raw-space FGD). Context only: desk-scale
# runs use a locally trained stand-in autoencoder and are not comparable.
FULL_SCALE_REFERENCE = {
    AblationLayout.SPLIT: (14.461, 531.172),
    AblationLayout.FULL_LENGTH_SEED_AND_SPEECH: (19.017, 767.503),
    AblationLayout.FULL_LENGTH_SEED: (15.539, 616.437),
}

LAYOUT_LABELS = {
    AblationLayout.SPLIT: "split conditioning (ours)",
    AblationLayout.FULL_LENGTH_SEED_AND_SPEECH: "full-length seed + speech",
    AblationLayout.FULL_LENGTH_SEED: "full-length seed",
}


@dataclass
class AblationReport:
    rows: list[tuple[AblationLayout, float, float]]  # (layout, fgd_feature, fgd_raw)
    reference: dict = field(default_factory=lambda: dict(FULL_SCALE_REFERENCE))

    def as_table(self) -> str:
        lines = [f"{'layout':<28} {'FGD feature':>12} {'FGD raw':>12}"]
        for layout, feat, raw in self.rows:
            lines.append(f"{LAYOUT_LABELS[layout]:<28} {feat:>12.4f} {raw:>12.4f}")
        lines.append("")
        lines.append("full-scale published reference (not comparable at this scale):")
        for layout, (feat, raw) in self.reference.items():
            lines.append(f"{LAYOUT_LABELS[layout]:<28} {feat:>12.3f} {raw:>12.3f}")
        return "\n".join(lines)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("layout,fgd_feature_space,fgd_raw_space\n")
            for layout, feat, raw in self.rows:
                fh.write(f"{layout.value},{feat:.6f},{raw:.6f}\n")


def run_ablation(
    train_clips: list[TrainClip],
    eval_clips: list[TrainClip],
    config: DenoiserConfig,
    settings: TrainSettings,
    autoencoder_epochs: int = 40,
    sample_seed: int = 123,
) -> AblationReport:
    """Train each conditioning layout under identical seeds/budget and score
    generated held-out gestures with both FGD variants."""
    from .fgd import fgd_report, train_autoencoder, windows_from_sequences
    from .sampling import sample_clip

    if not eval_clips:
        raise ValueError("need held-out clips to evaluate")

    real = [clip.gesture[SEED_LEN:] for clip in eval_clips]
    ae_windows = windows_from_sequences([clip.gesture for clip in train_clips])
    autoencoder = train_autoencoder(ae_windows, epochs=autoencoder_epochs, seed=settings.seed)

    rows = []
    for layout in AblationLayout:
        result = train(train_clips, config, settings, layout=layout)
        generated = []
        for i, clip in enumerate(eval_clips):
            cond = Conditioning.single(clip.seed, clip.audio, clip.text, clip.speaker)
            rng = torch.Generator().manual_seed(sample_seed + i)
            sample = sample_clip(result.model, result.schedule, cond, rng)
            generated.append(sample[SEED_LEN:])
        report = fgd_report(real, generated, autoencoder)
        rows.append((layout, report.feature_space, report.raw_space))
    return AblationReport(rows=rows)


def parse_run_config(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment. Keys are documented in
    the README (model dims, training settings, windowing stride, layout)."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"run config line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


_CONFIG_FIELDS = {
    "latent_dim": int, "local_heads": int, "local_channels_per_head": int,
    "window": int, "self_layers": int, "self_heads": int, "dropout": float,
    "ff_mult": int, "feature_dim": int, "attend_following_window": lambda v: v.lower() == "true",
}
_SETTINGS_FIELDS = {
    "steps": int, "batch_size": int, "lr": float, "weight_decay": float,
    "p_mask": float, "mask_seed": lambda v: v.lower() == "true",
    "t_max": int, "huber_delta": float, "seed": int,
}


def configs_from_values(
    values: dict[str, str],
    base_config: DenoiserConfig,
    base_settings: TrainSettings,
) -> tuple[DenoiserConfig, TrainSettings]:
    """Apply flat run-config values on top of base config/settings."""
    config_kw = {}
    settings_kw = {}
    for key, raw in values.items():
        if key in _CONFIG_FIELDS:
            config_kw[key] = _CONFIG_FIELDS[key](raw)
        elif key in _SETTINGS_FIELDS:
            settings_kw[key] = _SETTINGS_FIELDS[key](raw)
        elif key in ("stride", "layout"):
            continue  # consumed by the CLI
        else:
            raise ValueError(f"unknown run-config key {key!r}")
    return replace(base_config, **config_kw), replace(base_settings, **settings_kw)
