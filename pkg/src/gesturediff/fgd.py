"""Frechet Gesture Distance in a learned autoencoder feature space and in
raw feature space.

The challenge-supplied autoencoder is unavailable, so a small stand-in is
trained locally on 30-frame windows; absolute feature-space values are
therefore not comparable to published numbers, only relative orderings
within one run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .sidecars import read_gdp1, write_gdp1


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d) symmetric PSD
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"inconsistent moment shapes {mean.shape} / {cov.shape}")
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased (n-1) covariance of row vectors."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError(f"need an (n >= 2, d) matrix, got shape {features.shape}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (features.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov, n=features.shape[0])


def _psd_eigvals(matrix: np.ndarray, what: str) -> np.ndarray:
    """Eigenvalues with tiny negatives clamped to 0; errors on real negatives.

    Thresholds scale with max(1, largest eigenvalue) so they reduce to the
    absolute 1e-8 / 1e-6 bounds on normalized data.
    """
    eigvals = np.linalg.eigvalsh((matrix + matrix.T) / 2.0)
    scale = max(1.0, float(eigvals[-1]))
    if eigvals[0] < -1e-6 * scale:
        raise ValueError(f"{what} has eigenvalue {eigvals[0]:.3e}, not PSD")
    return np.clip(eigvals, 0.0, None)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians.

    d^2 = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix
    square root evaluated through the symmetric form S1^{1/2} S2 S1^{1/2}.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    mean_term = float(np.sum((a.mean - b.mean) ** 2))

    sym_a = (a.cov + a.cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym_a)
    scale = max(1.0, float(eigvals[-1]))
    if eigvals[0] < -1e-6 * scale:
        raise ValueError(f"covariance has eigenvalue {eigvals[0]:.3e}, not PSD")
    sqrt_a = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T

    inner = sqrt_a @ b.cov @ sqrt_a
    cross = np.sqrt(_psd_eigvals(inner, "product covariance")).sum()
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * float(cross)
    return max(value, 0.0)


@dataclass(frozen=True)
class AutoencoderConfig:
    window: int = 30
    feature_dim: int = 2232
    hidden_dim: int = 128
    latent_dim: int = 32


class MotionAutoencoder(nn.Module):
    """Flattened-window MLP autoencoder: the stand-in FGD feature space."""

    def __init__(self, config: AutoencoderConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        d_in = config.window * config.feature_dim
        self.encoder = nn.Sequential(
            nn.Linear(d_in, config.hidden_dim), nn.ReLU(),
            nn.Linear(config.hidden_dim, config.latent_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(config.latent_dim, config.hidden_dim), nn.ReLU(),
            nn.Linear(config.hidden_dim, d_in),
        )
        self.training_losses: np.ndarray | None = None
        rng = torch.Generator().manual_seed(init_seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / np.sqrt(module.weight.shape[1])
                    module.weight.uniform_(-bound, bound, generator=rng)
                    module.bias.zero_()

    def encode(self, windows: np.ndarray) -> np.ndarray:
        """(N, window, feature_dim) -> (N, latent_dim)."""
        flat = torch.as_tensor(
            np.asarray(windows, dtype=np.float32).reshape(len(windows), -1)
        )
        with torch.no_grad():
            return self.encoder(flat).numpy().astype(np.float64)

    def forward(self, flat: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(flat))


def windows_from_sequences(
    sequences: list, window: int = 30, stride: int = 30
) -> np.ndarray:
    """All complete `window`-frame windows from feature sequences (T, d)."""
    chunks = []
    for seq in sequences:
        frames = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)
        for start in range(0, frames.shape[0] - window + 1, stride):
            chunks.append(frames[start : start + window])
    if not chunks:
        return np.zeros((0, window, 0))
    return np.stack(chunks)


def train_autoencoder(
    windows: np.ndarray,
    config: AutoencoderConfig | None = None,
    epochs: int = 40,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> MotionAutoencoder:
    """Fit the stand-in autoencoder by mean-squared reconstruction.

    Requires at least 100 windows; deterministic under a fixed seed. The
    per-epoch loss curve is left on the model as `training_losses`.
    """
    windows = np.asarray(windows, dtype=np.float32)
    if windows.shape[0] < 100:
        raise ValueError(f"need at least 100 windows to fit, got {windows.shape[0]}")
    if config is None:
        config = AutoencoderConfig(window=windows.shape[1], feature_dim=windows.shape[2])

    model = MotionAutoencoder(config, init_seed=seed)
    data = torch.as_tensor(windows.reshape(windows.shape[0], -1))
    rng = torch.Generator().manual_seed(seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    losses = np.zeros(epochs)
    for epoch in range(epochs):
        order = torch.randperm(data.shape[0], generator=rng)
        epoch_loss = 0.0
        for start in range(0, data.shape[0], batch_size):
            batch = data[order[start : start + batch_size]]
            recon = model(batch)
            loss = torch.mean((recon - batch) ** 2)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite autoencoder loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * batch.shape[0]
        losses[epoch] = epoch_loss / data.shape[0]

    model.eval()
    model.training_losses = losses
    return model


@dataclass(frozen=True)
class FgdReport:
    feature_space: float
    raw_space: float


def fgd_report(
    real: list,
    generated: list,
    autoencoder: MotionAutoencoder,
    raw_on: str = "frames",
) -> FgdReport:
    """Both FGD variants between a real and a generated corpus.

    feature_space: distance between Gaussians over encoder latents of all
    30-frame windows. raw_space: over raw feature frames (or flattened
    windows with raw_on='windows').
    """
    if not real or not generated:
        raise ValueError("both corpora must be non-empty")
    if raw_on not in ("frames", "windows"):
        raise ValueError(f"raw_on must be 'frames' or 'windows', got {raw_on!r}")

    window = autoencoder.config.window
    real_windows = windows_from_sequences(real, window=window, stride=window)
    gen_windows = windows_from_sequences(generated, window=window, stride=window)
    if real_windows.shape[0] < 2 or gen_windows.shape[0] < 2:
        raise ValueError("not enough windows for moment estimation")
    feature = frechet_distance(
        fit_gaussian(autoencoder.encode(real_windows)),
        fit_gaussian(autoencoder.encode(gen_windows)),
    )

    if raw_on == "frames":
        real_raw = np.vstack([np.asarray(getattr(s, "frames", s)) for s in real])
        gen_raw = np.vstack([np.asarray(getattr(s, "frames", s)) for s in generated])
    else:
        real_raw = real_windows.reshape(real_windows.shape[0], -1)
        gen_raw = gen_windows.reshape(gen_windows.shape[0], -1)
    raw = frechet_distance(fit_gaussian(real_raw), fit_gaussian(gen_raw))
    return FgdReport(feature_space=feature, raw_space=raw)


def save_autoencoder(path, model: MotionAutoencoder) -> None:
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    write_gdp1(path, tensors)


def load_autoencoder(path, config: AutoencoderConfig) -> MotionAutoencoder:
    model = MotionAutoencoder(config)
    tensors = read_gdp1(path)
    state = {name: torch.from_numpy(arr).to(torch.float32) for name, arr in tensors.items()}
    model.load_state_dict(state)
    return model
