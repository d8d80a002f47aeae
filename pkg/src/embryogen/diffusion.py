"""Denoising diffusion at desk scale.

Handles:
- linear noise schedules and the variance-preserving forward process
- noise-prediction training with periodic checkpointing
- stochastic ancestral sampling back to clean data
- latent codecs (identity, area-downsample, small learned autoencoder)

One model is trained per developmental stage; nothing here is shared
mutable state, so per-stage trainings can run as independent jobs.
"""

from __future__ import annotations

import copy
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .records import Stage

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class DiffusionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schedule and forward process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def make_linear_schedule(
    T: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """beta_t = beta_start + (beta_end - beta_start) * t / (T - 1)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def posterior_variance(schedule: NoiseSchedule) -> np.ndarray:
    """Reverse-step variance beta_t * (1 - abar_{t-1}) / (1 - abar_t);
    zero at t=0 where there is no previous step."""
    abar_prev = np.concatenate([[1.0], schedule.alpha_bar[:-1]])
    return schedule.beta * (1.0 - abar_prev) / (1.0 - schedule.alpha_bar)


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    picked = torch.as_tensor(values, dtype=like.dtype)[t]
    if picked.ndim == 0:
        return picked
    return picked.view(-1, *([1] * (like.ndim - 1)))


def forward_diffuse(
    x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    ``t`` is a step index or a per-sample index tensor."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    t_arr = np.asarray(t if not torch.is_tensor(t) else t.numpy())
    if t_arr.min() < 0 or t_arr.max() >= schedule.T:
        raise ValueError(f"t must lie in [0, {schedule.T}), got {t}")
    sqrt_ab = _gather(np.sqrt(schedule.alpha_bar), t, x0)
    sqrt_one_minus = _gather(np.sqrt(1.0 - schedule.alpha_bar), t, x0)
    return sqrt_ab * x0 + sqrt_one_minus * eps


def diffusion_loss(eps_pred: torch.Tensor, eps_true: torch.Tensor) -> torch.Tensor:
    if eps_pred.shape != eps_true.shape:
        raise ValueError(
            f"shape mismatch: {tuple(eps_pred.shape)} vs {tuple(eps_true.shape)}"
        )
    return F.mse_loss(eps_pred, eps_true)


# ---------------------------------------------------------------------------
# denoiser networks
# ---------------------------------------------------------------------------

def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sin/cos features of the integer timestep, transformer style."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    t = t.float().view(-1, 1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half).float() / half)
    angles = t * freqs.view(1, -1)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class MlpDenoiser(nn.Module):
    """Denoiser for flat vector data (latent points, toy distributions)."""

    def __init__(self, dim: int, hidden: int = 64, time_dim: int = 16):
        super().__init__()
        self.dim = dim
        self.time_dim = time_dim
        self.net = nn.Sequential(
            nn.Linear(dim + time_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        emb = sinusoidal_embedding(t, self.time_dim)
        return self.net(torch.cat([x, emb], dim=1))


class ConvDenoiser(nn.Module):
    """Small two-level encoder/decoder with a skip connection and additive
    timestep conditioning at the bottleneck. Input sides must be even."""

    def __init__(self, channels: int = 1, base: int = 16, time_dim: int = 32):
        super().__init__()
        self.channels = channels
        self.time_dim = time_dim
        self.time_proj = nn.Sequential(
            nn.Linear(time_dim, base * 2), nn.SiLU(), nn.Linear(base * 2, base * 2)
        )
        self.enc1 = nn.Conv2d(channels, base, 3, padding=1)
        self.enc2 = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(base * 2, base * 2, 3, padding=1)
        self.up = nn.ConvTranspose2d(base * 2, base, 4, stride=2, padding=1)
        self.dec = nn.Conv2d(base * 2, base, 3, padding=1)
        self.out = nn.Conv2d(base, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        emb = self.time_proj(sinusoidal_embedding(t, self.time_dim))
        h1 = F.silu(self.enc1(x))
        h2 = F.silu(self.enc2(h1))
        h2 = F.silu(self.mid(h2) + emb[:, :, None, None])
        u = F.silu(self.up(h2))
        u = F.silu(self.dec(torch.cat([u, h1], dim=1)))
        return self.out(u)


_ARCHITECTURES = {"mlp": MlpDenoiser, "conv": ConvDenoiser}


def _build_denoiser(arch: str, arch_kwargs: dict) -> nn.Module:
    if arch not in _ARCHITECTURES:
        raise DiffusionError(f"unknown denoiser architecture {arch!r}")
    return _ARCHITECTURES[arch](**arch_kwargs)


# ---------------------------------------------------------------------------
# latent codecs
# ---------------------------------------------------------------------------

class IdentityCodec:
    """Images pass through untouched; the latent is the image itself."""

    spec = "identity"

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return images

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return latents

    def state(self) -> Optional[dict]:
        return None

    def reconstruction_error(self, images: torch.Tensor) -> float:
        return 0.0


class DownsampleCodec:
    """Area downsample by an integer factor; decode by bilinear resize.

    Cheap and weight-free; loses detail finer than the factor, which the
    reconstruction_error probe quantifies per dataset."""

    def __init__(self, factor: int):
        if factor < 1:
            raise ValueError(f"factor must be >= 1, got {factor}")
        self.factor = factor

    @property
    def spec(self) -> str:
        return f"downsample:{self.factor}"

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(images, self.factor)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return F.interpolate(
            latents, scale_factor=self.factor, mode="bilinear", align_corners=False
        )

    def state(self) -> Optional[dict]:
        return None

    def reconstruction_error(self, images: torch.Tensor) -> float:
        with torch.no_grad():
            round_trip = self.decode(self.encode(images))
        return float((round_trip - images).abs().mean())


class LearnedCodec(nn.Module):
    """Tiny convolutional autoencoder: 1xHxW -> 4x(H/4)x(W/4) and back."""

    def __init__(self, base: int = 8):
        super().__init__()
        self.base = base
        self.encoder = nn.Sequential(
            nn.Conv2d(1, base, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, 4, 3, stride=2, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(4, base, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(base, 1, 4, stride=2, padding=1),
            nn.Sigmoid(),
        )

    @property
    def spec(self) -> str:
        return f"learned:{self.base}"

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.encoder(images)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.decoder(latents)

    def state(self) -> Optional[dict]:
        return {k: v.clone() for k, v in self.state_dict().items()}

    def reconstruction_error(self, images: torch.Tensor) -> float:
        round_trip = self.decode(self.encode(images))
        return float((round_trip - images).abs().mean())

    def fit(
        self,
        images: torch.Tensor,
        epochs: int = 30,
        batch_size: int = 32,
        lr: float = 1e-3,
        seed: int = 0,
    ) -> list[float]:
        generator = torch.Generator().manual_seed(seed)
        optimizer = torch.optim.Adam(self.parameters(), lr=lr)
        losses = []
        for _ in range(epochs):
            order = torch.randperm(images.shape[0], generator=generator)
            total, batches = 0.0, 0
            for start in range(0, images.shape[0], batch_size):
                batch = images[order[start : start + batch_size]]
                recon = self.decoder(self.encoder(batch))
                loss = F.mse_loss(recon, batch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss.detach())
                batches += 1
            losses.append(total / max(batches, 1))
        return losses


def build_codec(spec: str, state: Optional[dict] = None):
    if spec == "identity":
        return IdentityCodec()
    if spec.startswith("downsample:"):
        return DownsampleCodec(int(spec.split(":", 1)[1]))
    if spec.startswith("learned:"):
        codec = LearnedCodec(int(spec.split(":", 1)[1]))
        if state is not None:
            codec.load_state_dict(state)
        return codec
    raise DiffusionError(f"unknown codec spec {spec!r}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionTrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 2e-6
    T: int = 1000
    fid_interval_epochs: int = 50
    seed: int = 0
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def __post_init__(self):
        for name in ("epochs", "batch_size", "T", "fid_interval_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _state_hash(state_dict: dict) -> str:
    digest = hashlib.sha256()
    for key in sorted(state_dict):
        digest.update(key.encode())
        digest.update(state_dict[key].detach().numpy().tobytes())
    return digest.hexdigest()[:16]


@dataclass
class DiffusionCheckpoint:
    stage: str
    epoch: int
    arch: str
    arch_kwargs: dict
    state_dict: dict
    T: int
    beta_start: float
    beta_end: float
    codec_spec: str
    codec_state: Optional[dict]
    latent_shape: tuple
    content_hash: str = ""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = _state_hash(self.state_dict)

    @property
    def ref(self) -> str:
        return f"ldm_{self.stage}_e{self.epoch}.ckpt"

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def build_model(self) -> nn.Module:
        model = _build_denoiser(self.arch, self.arch_kwargs)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def sample(self, n: int, seed: int) -> np.ndarray:
        return sample_diffusion(self, self.schedule(), n, seed)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / self.ref
        torch.save(
            {
                "stage": self.stage,
                "epoch": self.epoch,
                "arch": self.arch,
                "arch_kwargs": self.arch_kwargs,
                "state_dict": self.state_dict,
                "T": self.T,
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
                "codec_spec": self.codec_spec,
                "codec_state": self.codec_state,
                "latent_shape": tuple(self.latent_shape),
                "content_hash": self.content_hash,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DiffusionCheckpoint":
        payload = torch.load(path, weights_only=False)
        return cls(**payload)


@dataclass
class DiffusionTrainResult:
    checkpoints: list[DiffusionCheckpoint]
    epoch_losses: list[float]


def _checkpoint_epochs(epochs: int, interval: int) -> list[int]:
    marks = [e for e in range(interval, epochs + 1, interval)]
    if not marks or marks[-1] != epochs:
        marks.append(epochs)
    return marks


def train_diffusion(
    dataset: np.ndarray,
    codec,
    config: DiffusionTrainConfig,
    stage: Stage | str = "unstaged",
    arch: Optional[str] = None,
    arch_kwargs: Optional[dict] = None,
    out_dir: Optional[str | Path] = None,
) -> DiffusionTrainResult:
    """Train one noise predictor on one stage's data.

    ``dataset`` is (N, H, W) pixels in [0, 1] (encoded through ``codec``)
    or (N, D) latent vectors with ``codec=None``. Checkpoints are emitted
    every ``fid_interval_epochs`` and at the final epoch, and written to
    ``out_dir`` when given."""
    data = np.asarray(dataset, dtype=np.float32)
    if data.size == 0:
        raise DiffusionError("empty dataset")
    stage_name = stage.value if isinstance(stage, Stage) else str(stage)

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)

    if data.ndim == 3:
        images = torch.from_numpy(data).unsqueeze(1)
        codec = codec if codec is not None else IdentityCodec()
        latents = codec.encode(images).detach()
        if arch is None:
            arch = "conv"
        if arch_kwargs is None:
            arch_kwargs = {"channels": int(latents.shape[1])}
    elif data.ndim == 2:
        if codec is not None:
            raise DiffusionError("vector datasets take codec=None")
        codec = None
        latents = torch.from_numpy(data)
        if arch is None:
            arch = "mlp"
        if arch_kwargs is None:
            arch_kwargs = {"dim": int(latents.shape[1])}
    else:
        raise DiffusionError(f"dataset must be (N,H,W) or (N,D), got {data.shape}")

    schedule = make_linear_schedule(config.T, config.beta_start, config.beta_end)
    model = _build_denoiser(arch, arch_kwargs)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    n = latents.shape[0]
    marks = set(_checkpoint_epochs(config.epochs, config.fid_interval_epochs))
    checkpoints: list[DiffusionCheckpoint] = []
    epoch_losses: list[float] = []

    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            x0 = latents[order[start : start + config.batch_size]]
            t = torch.randint(0, schedule.T, (x0.shape[0],), generator=generator)
            eps = torch.randn(x0.shape, generator=generator)
            x_t = forward_diffuse(x0, t, eps, schedule)
            loss = diffusion_loss(model(x_t, t), eps)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        epoch_losses.append(total / batches)

        if epoch in marks:
            checkpoint = DiffusionCheckpoint(
                stage=stage_name,
                epoch=epoch,
                arch=arch,
                arch_kwargs=dict(arch_kwargs),
                state_dict={k: v.clone() for k, v in model.state_dict().items()},
                T=config.T,
                beta_start=config.beta_start,
                beta_end=config.beta_end,
                codec_spec=codec.spec if codec is not None else "none",
                codec_state=codec.state() if codec is not None else None,
                latent_shape=tuple(latents.shape[1:]),
            )
            if out_dir is not None:
                checkpoint.save(out_dir)
            checkpoints.append(checkpoint)

    return DiffusionTrainResult(checkpoints=checkpoints, epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def ancestral_sample(
    model: nn.Module,
    schedule: NoiseSchedule,
    shape: tuple,
    n: int,
    seed: int,
) -> torch.Tensor:
    """Reverse process from pure noise, one full pass, no output clamping.

    Per-step variance is the forward posterior beta_t(1-abar_{t-1})/(1-abar_t)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn((n, *shape), generator=generator)
    variance = posterior_variance(schedule)
    with torch.no_grad():
        for t in range(schedule.T - 1, -1, -1):
            t_batch = torch.full((n,), t, dtype=torch.long)
            eps_hat = model(x, t_batch)
            alpha_t = schedule.alpha[t]
            abar_t = schedule.alpha_bar[t]
            mean = (x - schedule.beta[t] / math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(
                alpha_t
            )
            if t > 0:
                noise = torch.randn(x.shape, generator=generator)
                x = mean + math.sqrt(variance[t]) * noise
            else:
                x = mean
    return x


def sample_diffusion(
    checkpoint: DiffusionCheckpoint,
    schedule: NoiseSchedule,
    n: int,
    seed: int,
) -> np.ndarray:
    """Decode a fresh batch of samples to images clamped to [0, 1]."""
    model = checkpoint.build_model()
    latents = ancestral_sample(model, schedule, checkpoint.latent_shape, n, seed)
    if checkpoint.codec_spec == "none":
        return latents.numpy()
    codec = build_codec(checkpoint.codec_spec, checkpoint.codec_state)
    images = codec.decode(latents)
    return images.clamp(0.0, 1.0).squeeze(1).numpy().astype(np.float32)
