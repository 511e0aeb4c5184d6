"""DDPM machinery: cosine schedule, forward noising, x0-parameterized reverse
steps, and the Huber training objective.

Schedule tables are float64 numpy arrays indexed 1..t_max with a sentinel at
index 0 (beta 0, alpha_bar 1). Tensor operations run on torch tensors; every
noise draw is supplied by the caller, so there is no hidden RNG state here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .sidecars import read_gds1, write_gds1

BETA_MAX = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    t_max: int
    beta: np.ndarray  # (t_max+1,), beta[0] = 0 sentinel
    alpha: np.ndarray  # 1 - beta
    alpha_bar: np.ndarray  # cumulative product of alpha

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        for name in ("beta", "alpha", "alpha_bar"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (self.t_max + 1,):
                raise ValueError(f"{name} must have length t_max+1")
        # 1e-6 slack: serialized schedules round through float32.
        if np.any(self.beta[1:] <= 0) or np.any(self.beta[1:] > BETA_MAX + 1e-6):
            raise ValueError(f"beta values must lie in (0, {BETA_MAX}]")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")


def cosine_schedule(t_max: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    """Cosine alpha_bar profile with offset s; betas clipped to (0, 0.999]."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    steps = np.arange(t_max + 1, dtype=np.float64)
    f = np.cos(((steps / t_max) + s) / (1.0 + s) * np.pi / 2.0) ** 2
    beta = np.zeros(t_max + 1)
    beta[1:] = np.clip(1.0 - f[1:] / f[:-1], None, BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(t_max=t_max, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _gather(table: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Index a schedule table by scalar or batched t, shaped to broadcast."""
    if isinstance(t, torch.Tensor):
        values = torch.from_numpy(table).to(like.dtype)[t]
        return values.view(-1, *([1] * (like.ndim - 1)))
    return torch.as_tensor(table[int(t)], dtype=like.dtype)


def _check_t(t, t_max: int) -> None:
    t_arr = t.numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > t_max):
        raise ValueError(f"noising step t={t} outside [1, {t_max}]")


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward diffusion: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    _check_t(t, schedule.t_max)
    ab = _gather(schedule.alpha_bar, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def posterior_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    fresh_noise: torch.Tensor | None,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """One reverse step x_t -> x_{t-1} given the x0 prediction.

    Posterior mean combines x0_hat and x_t with the closed-form coefficients;
    variance is beta_tilde. At t = 1 the mean is returned without noise.
    """
    t = int(t)
    _check_t(t, schedule.t_max)
    if x_t.shape != x0_hat.shape:
        raise ValueError(f"x_t shape {tuple(x_t.shape)} != x0_hat shape {tuple(x0_hat.shape)}")

    beta_t = schedule.beta[t]
    alpha_t = schedule.alpha[t]
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]

    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1 or fresh_noise is None:
        return mean
    beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean + np.sqrt(beta_tilde) * fresh_noise


def huber_loss(x0: torch.Tensor, x0_hat: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean elementwise Huber: 0.5 e^2 for |e| <= delta, delta(|e| - delta/2) beyond."""
    if x0.shape != x0_hat.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != x0_hat shape {tuple(x0_hat.shape)}")
    err = x0 - x0_hat
    abs_err = err.abs()
    quadratic = 0.5 * err**2
    linear = delta * (abs_err - 0.5 * delta)
    return torch.where(abs_err <= delta, quadratic, linear).mean()


def save_schedule(path: str | Path, schedule: NoiseSchedule) -> None:
    write_gds1(path, schedule.beta[1:], schedule.alpha_bar[1:])


def load_schedule(path: str | Path) -> NoiseSchedule:
    beta_tail, _ = read_gds1(path)
    t_max = beta_tail.shape[0]
    beta = np.concatenate([[0.0], beta_tail])
    alpha = 1.0 - beta
    return NoiseSchedule(t_max=t_max, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))
