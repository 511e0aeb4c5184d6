"""The gesture denoising network: token assembly with the seed/speech
conditioning split, cross-local attention, self-attention with relative
position bias, and condition masking.

Token layout (the load-bearing design): the noisy gesture clip spans
n_seed + n_pred positions. Seed-gesture content is added only to the first
n_seed tokens and speech (audio + text) content only to the last n_pred,
while the noising-step/speaker vector Z is added everywhere. The two
full-length ablation layouts deliberately break this split by stretching
seed and/or speech over every position.

All randomness (parameter init, dropout, condition masks) flows through
explicit torch.Generator objects; dropout is applied only when a generator
is passed, so evaluation is deterministic by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import torch
from torch import nn

from .sidecars import read_gdp1, write_gdp1


class AblationLayout(Enum):
    """Where seed and speech conditioning enter the token sequence."""

    SPLIT = "split"
    FULL_LENGTH_SEED_AND_SPEECH = "full_seed_speech"
    FULL_LENGTH_SEED = "full_seed"


@dataclass(frozen=True)
class DenoiserConfig:
    feature_dim: int = 2232
    audio_dim: int = 1133
    text_dim: int = 302
    speaker_dim: int = 17
    latent_dim: int = 512
    local_heads: int = 8
    local_channels_per_head: int = 6  # 48 attention channels over 8 heads
    window: int = 15
    self_layers: int = 8
    self_heads: int = 8
    dropout: float = 0.1
    n_seed: int = 30
    n_pred: int = 120
    ff_mult: int = 4
    # Relative-position bias covers +-(n_seed + n_pred) offsets by default;
    # longer sequences clamp, keeping parameter shapes length-independent.
    self_rpe_max_offset: int = 150
    attend_following_window: bool = False  # flips local attention direction
    layout: AblationLayout = AblationLayout.SPLIT

    def __post_init__(self):
        if self.latent_dim % 2 != 0:
            raise ValueError("latent_dim must be even for the sinusoidal embedding")
        if self.latent_dim % self.self_heads != 0:
            raise ValueError("self_heads must divide latent_dim")
        for name in ("feature_dim", "audio_dim", "text_dim", "speaker_dim", "latent_dim",
                     "local_heads", "local_channels_per_head", "window", "self_layers",
                     "self_heads", "n_seed", "n_pred", "ff_mult", "self_rpe_max_offset"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def full_scale() -> DenoiserConfig:
    """Full-scale training configuration (not intended for CPU test runs)."""
    return DenoiserConfig()


def desk_scale() -> DenoiserConfig:
    """Small configuration that trains and samples in minutes on a CPU."""
    return DenoiserConfig(
        latent_dim=64,
        local_heads=4,
        local_channels_per_head=8,
        self_layers=2,
        self_heads=4,
    )


@dataclass(frozen=True)
class Conditioning:
    """Batched conditioning tensors: seed gesture, audio, text, speaker."""

    seed: torch.Tensor  # (B, n_seed, feature_dim)
    audio: torch.Tensor  # (B, n_pred, audio_dim)
    text: torch.Tensor  # (B, n_pred, text_dim)
    speaker: torch.Tensor  # (B, speaker_dim) one-hot rows
    mask_speaker: torch.Tensor  # (B,) bool
    mask_seed: torch.Tensor  # (B,) bool

    @classmethod
    def single(cls, seed, audio, text, speaker, mask_speaker=False, mask_seed=False,
               dtype=torch.float32) -> "Conditioning":
        """Build a batch of one from array-likes."""
        as_t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype).unsqueeze(0)
        return cls(
            seed=as_t(seed),
            audio=as_t(audio),
            text=as_t(text),
            speaker=as_t(speaker).reshape(1, -1),
            mask_speaker=torch.tensor([mask_speaker]),
            mask_seed=torch.tensor([mask_seed]),
        )

    @property
    def batch_size(self) -> int:
        return self.seed.shape[0]

    def with_speaker_masked(self) -> "Conditioning":
        return replace(self, mask_speaker=torch.ones_like(self.mask_speaker))


def apply_condition_masks(
    cond: Conditioning,
    p_mask: float,
    rng: torch.Generator,
    include_seed: bool = False,
) -> Conditioning:
    """Independently drop the speaker (and optionally seed) condition per sample."""
    if not 0.0 <= p_mask <= 1.0:
        raise ValueError(f"p_mask must be in [0, 1], got {p_mask}")
    b = cond.batch_size
    draw = lambda: torch.rand(b, generator=rng) < p_mask
    mask_speaker = draw()
    mask_seed = draw() if include_seed else torch.zeros(b, dtype=torch.bool)
    return replace(cond, mask_speaker=mask_speaker, mask_seed=mask_seed)


def timestep_embedding(t, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Sinusoidal noising-step encoding: sin half then cos half.

    Every embedding has norm sqrt(dim/2); t = 0 maps to zeros/ones.
    """
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    if not isinstance(t, torch.Tensor):
        t = torch.tensor(float(t))
    t = t.to(torch.float64).reshape(-1)
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    angles = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    return emb.to(dtype=dtype, device=device)


def _dropout(x: torch.Tensor, p: float, rng: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator; identity when rng is None."""
    if rng is None or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=rng) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


def local_attention_mask(length: int, window: int, attend_following: bool = False) -> torch.Tensor:
    """Boolean (L, L) mask: query i may attend key j.

    The sequence is tiled into windows of `window` tokens (ragged final
    window allowed); window w sees itself and the window before it (after it
    when attend_following is set). Window 0 sees only itself.
    """
    idx = torch.arange(length)
    win = idx // window
    diff = win[:, None] - win[None, :]  # query window minus key window
    if attend_following:
        return (diff == 0) | (diff == -1)
    return (diff == 0) | (diff == 1)


def _rpe_bias(table: torch.Tensor, length: int) -> torch.Tensor:
    """(heads, L, L) bias from a (heads, 2*max_offset+1) table, offsets clamped."""
    max_offset = (table.shape[1] - 1) // 2
    idx = torch.arange(length)
    offsets = torch.clamp(idx[None, :] - idx[:, None], -max_offset, max_offset) + max_offset
    return table[:, offsets]


def _masked_attention(
    q: torch.Tensor,  # (B, H, L, C)
    k: torch.Tensor,
    v: torch.Tensor,
    bias: torch.Tensor,  # (H, L, L)
    mask: torch.Tensor | None,  # (L, L) bool or None for full attention
    dropout_p: float,
    rng: torch.Generator | None,
    return_weights: bool = False,
):
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = (q @ k.transpose(-2, -1)) * scale + bias.to(q.dtype)
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    dropped = _dropout(weights, dropout_p, rng)
    out = dropped @ v
    if return_weights:
        return out, weights
    return out


class CrossLocalAttention(nn.Module):
    """Windowed attention where each window also sees its neighbor window.

    Queries/keys/values live in heads * channels_per_head dimensions (the
    narrow "attention channels"), projected back to the latent width; a
    learned relative-position bias covers offsets within +-2 windows.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.heads = config.local_heads
        self.channels = config.local_channels_per_head
        self.window = config.window
        self.attend_following = config.attend_following_window
        self.dropout_p = config.dropout
        inner = self.heads * self.channels
        self.norm = nn.LayerNorm(config.latent_dim)
        self.qkv = nn.Linear(config.latent_dim, 3 * inner)
        self.out = nn.Linear(inner, config.latent_dim)
        self.rpe = nn.Parameter(torch.zeros(self.heads, 4 * config.window + 1))

    def forward(self, tokens: torch.Tensor, dropout_rng: torch.Generator | None = None,
                return_weights: bool = False):
        b, length, _ = tokens.shape
        h, c = self.heads, self.channels
        q, k, v = self.qkv(self.norm(tokens)).reshape(b, length, 3, h, c).permute(2, 0, 3, 1, 4)
        bias = _rpe_bias(self.rpe, length)
        mask = local_attention_mask(length, self.window, self.attend_following)
        result = _masked_attention(q, k, v, bias, mask, self.dropout_p, dropout_rng,
                                   return_weights)
        ctx, weights = result if return_weights else (result, None)
        ctx = ctx.permute(0, 2, 1, 3).reshape(b, length, h * c)
        out = tokens + self.out(ctx)
        if return_weights:
            return out, weights
        return out


class SelfAttentionBlock(nn.Module):
    """Pre-norm full self-attention with relative position bias, then FF."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.heads = config.self_heads
        self.channels = config.latent_dim // config.self_heads
        self.dropout_p = config.dropout
        self.norm1 = nn.LayerNorm(config.latent_dim)
        self.qkv = nn.Linear(config.latent_dim, 3 * config.latent_dim)
        self.out = nn.Linear(config.latent_dim, config.latent_dim)
        self.rpe = nn.Parameter(torch.zeros(self.heads, 2 * config.self_rpe_max_offset + 1))
        self.norm2 = nn.LayerNorm(config.latent_dim)
        self.ff_in = nn.Linear(config.latent_dim, config.ff_mult * config.latent_dim)
        self.ff_out = nn.Linear(config.ff_mult * config.latent_dim, config.latent_dim)

    def forward(self, tokens: torch.Tensor, dropout_rng: torch.Generator | None = None):
        b, length, _ = tokens.shape
        h, c = self.heads, self.channels
        q, k, v = self.qkv(self.norm1(tokens)).reshape(b, length, 3, h, c).permute(2, 0, 3, 1, 4)
        bias = _rpe_bias(self.rpe, length)
        ctx = _masked_attention(q, k, v, bias, None, self.dropout_p, dropout_rng)
        ctx = ctx.permute(0, 2, 1, 3).reshape(b, length, h * c)
        tokens = tokens + self.out(ctx)
        hidden = torch.nn.functional.gelu(self.ff_in(self.norm2(tokens)))
        return tokens + self.ff_out(_dropout(hidden, self.dropout_p, dropout_rng))


def _linear_resample(x: torch.Tensor, n: int) -> torch.Tensor:
    """Stretch (B, M, D) to (B, n, D) by linear interpolation, endpoints clamped."""
    m = x.shape[1]
    if m == 1:
        return x.expand(x.shape[0], n, x.shape[2])
    idx = torch.linspace(0.0, m - 1.0, n, dtype=x.dtype)
    lo = idx.floor().long()
    hi = torch.minimum(lo + 1, torch.tensor(m - 1))
    w = (idx - lo.to(x.dtype)).view(1, n, 1)
    return (1.0 - w) * x[:, lo] + w * x[:, hi]


class GestureDenoiser(nn.Module):
    """Predicts the clean gesture clip x0 from (x_t, t, conditioning).

    The output head is zero-initialized so an untrained model predicts the
    standardized-data mean; all other projections draw from U(+-1/sqrt(fan_in))
    using the provided seed.
    """

    def __init__(self, config: DenoiserConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        self.in_proj = nn.Linear(config.feature_dim, config.latent_dim)
        self.seed_proj = nn.Linear(config.feature_dim, config.latent_dim)
        self.speech_proj = nn.Linear(config.audio_dim + config.text_dim, config.latent_dim)
        self.t_proj = nn.Linear(config.latent_dim, config.latent_dim)
        self.speaker_proj = nn.Linear(config.speaker_dim, config.latent_dim)
        self.local_attn = CrossLocalAttention(config)
        self.self_blocks = nn.ModuleList(SelfAttentionBlock(config)
                                         for _ in range(config.self_layers))
        self.final_norm = nn.LayerNorm(config.latent_dim)
        self.out_head = nn.Linear(config.latent_dim, config.feature_dim)
        self.reset_parameters(init_seed)

    def reset_parameters(self, seed: int = 0) -> None:
        rng = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.weight.shape[1])
                    module.weight.uniform_(-bound, bound, generator=rng)
                    module.bias.zero_()
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()
            self.local_attn.rpe.zero_()
            for block in self.self_blocks:
                block.rpe.zero_()
            self.out_head.weight.zero_()
            self.out_head.bias.zero_()

    def _check_shapes(self, x_t: torch.Tensor, cond: Conditioning) -> tuple[int, int]:
        n_seed = cond.seed.shape[1]
        n_pred = cond.audio.shape[1]
        if cond.text.shape[1] != n_pred:
            raise ValueError(f"text rows {cond.text.shape[1]} != audio rows {n_pred}")
        if x_t.ndim != 3 or x_t.shape[1] != n_seed + n_pred:
            raise ValueError(
                f"x_t must be (B, {n_seed + n_pred}, {self.config.feature_dim}), "
                f"got {tuple(x_t.shape)}"
            )
        if x_t.shape[2] != self.config.feature_dim or cond.seed.shape[2] != self.config.feature_dim:
            raise ValueError("feature width mismatch with config")
        if cond.audio.shape[2] != self.config.audio_dim or cond.text.shape[2] != self.config.text_dim:
            raise ValueError("audio/text width mismatch with config")
        if cond.speaker.shape != (x_t.shape[0], self.config.speaker_dim):
            raise ValueError(f"speaker must be (B, {self.config.speaker_dim})")
        return n_seed, n_pred

    def assemble_tokens(self, x_t: torch.Tensor, t, cond: Conditioning) -> torch.Tensor:
        """Pre-attention token sequence of shape (B, n_seed + n_pred, latent)."""
        n_seed, n_pred = self._check_shapes(x_t, cond)
        cfg = self.config
        dtype = self.in_proj.weight.dtype
        length = n_seed + n_pred

        emb = timestep_embedding(t, cfg.latent_dim, dtype=dtype)
        if emb.shape[0] == 1 and x_t.shape[0] > 1:
            emb = emb.expand(x_t.shape[0], -1)
        speaker_term = self.speaker_proj(cond.speaker.to(dtype))
        speaker_term = speaker_term * (~cond.mask_speaker).to(dtype).unsqueeze(-1)
        z = self.t_proj(emb) + speaker_term  # (B, latent)

        tokens = self.in_proj(x_t) + z.unsqueeze(1)

        seed_term = self.seed_proj(cond.seed.to(dtype))
        seed_term = seed_term * (~cond.mask_seed).to(dtype).view(-1, 1, 1)
        speech = torch.cat([cond.audio.to(dtype), cond.text.to(dtype)], dim=-1)
        speech_term = self.speech_proj(speech)

        if cfg.layout is AblationLayout.SPLIT:
            tokens = torch.cat(
                [tokens[:, :n_seed] + seed_term, tokens[:, n_seed:] + speech_term], dim=1
            )
        elif cfg.layout is AblationLayout.FULL_LENGTH_SEED_AND_SPEECH:
            tokens = tokens + _linear_resample(seed_term, length)
            tokens = tokens + _linear_resample(speech_term, length)
        elif cfg.layout is AblationLayout.FULL_LENGTH_SEED:
            tokens = tokens + _linear_resample(seed_term, length)
            tokens = torch.cat(
                [tokens[:, :n_seed], tokens[:, n_seed:] + speech_term], dim=1
            )
        else:  # pragma: no cover
            raise ValueError(f"unknown layout {cfg.layout}")
        return tokens

    def forward(self, x_t: torch.Tensor, t, cond: Conditioning,
                dropout_rng: torch.Generator | None = None) -> torch.Tensor:
        tokens = self.assemble_tokens(x_t, t, cond)
        tokens = self.local_attn(tokens, dropout_rng)
        for block in self.self_blocks:
            tokens = block(tokens, dropout_rng)
        x0_hat = self.out_head(self.final_norm(tokens))
        if not torch.isfinite(x0_hat).all():
            raise RuntimeError("non-finite activations in denoiser output")
        return x0_hat


def save_denoiser(path, model: GestureDenoiser) -> None:
    """Checkpoint all parameters in the GDP1 tensor container."""
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    write_gdp1(path, tensors)


def load_denoiser(path, config: DenoiserConfig) -> GestureDenoiser:
    model = GestureDenoiser(config)
    tensors = read_gdp1(path)
    state = {name: torch.from_numpy(arr).to(torch.float32) for name, arr in tensors.items()}
    model.load_state_dict(state)
    return model
