"""Style-based adversarial generator at desk scale.

Handles:
- a mapping network from noise to style space
- a styled convolutional generator grown from a learned constant
- non-saturating logistic losses with R1 gradient regularization
- alternating training with optional flip/translate augmentation
- seeded sampling from saved checkpoints

Progressive growing, style mixing, and path-length regularization are
deliberately absent; the training recipe is the R1-regularized logistic
one matching the stated hyperparameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .records import Stage


class GanError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating logistic loss: mean softplus(-logit)."""
    if not torch.isfinite(fake_logits).all():
        raise ValueError("fake logits must be finite")
    return F.softplus(-fake_logits).mean()


def discriminator_loss(
    real_logits: torch.Tensor, fake_logits: torch.Tensor
) -> torch.Tensor:
    """mean softplus(-real) + mean softplus(fake)."""
    if not (torch.isfinite(real_logits).all() and torch.isfinite(fake_logits).all()):
        raise ValueError("logits must be finite")
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def r1_penalty(grad_real: torch.Tensor, gamma: float) -> torch.Tensor:
    """(gamma / 2) * mean over the batch of squared gradient norms."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    per_sample = grad_real.reshape(grad_real.shape[0], -1).pow(2).sum(dim=1)
    return (gamma / 2.0) * per_sample.mean()


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class MappingNetwork(nn.Module):
    """Feed-forward stack z -> w; activations between layers only, so a
    single identity-initialized layer is the identity map."""

    def __init__(self, dim: int = 128, layers: int = 3):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one layer")
        self.dim = dim
        self.layers = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(z).all():
            raise ValueError("latent input must be finite")
        w = z
        for i, layer in enumerate(self.layers):
            w = layer(w)
            if i < len(self.layers) - 1:
                w = F.leaky_relu(w, 0.2)
        return w


def map_latent(z: torch.Tensor, mapping: MappingNetwork) -> torch.Tensor:
    with torch.no_grad():
        return mapping(z)


class AdaIN(nn.Module):
    """Normalize per channel, then scale and shift from the style vector."""

    def __init__(self, channels: int, style_dim: int):
        super().__init__()
        self.affine = nn.Linear(style_dim, channels * 2)
        self.affine.bias.data[:channels] = 1.0
        self.affine.bias.data[channels:] = 0.0

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        normalized = F.instance_norm(x)
        params = self.affine(w)
        scale, shift = params.chunk(2, dim=1)
        return normalized * scale[:, :, None, None] + shift[:, :, None, None]


class StyleBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, style_dim: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.adain = AdaIN(out_ch, style_dim)

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.adain(self.conv(x), w), 0.2)


class Generator(nn.Module):
    """Grows a learned 4x4 constant up to the target resolution, styled at
    every block by the mapped latent."""

    def __init__(self, resolution: int = 64, style_dim: int = 128, base: int = 32):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
        self.resolution = resolution
        self.style_dim = style_dim
        self.mapping = MappingNetwork(style_dim)
        self.constant = nn.Parameter(torch.randn(1, base, 4, 4))
        blocks = []
        size = 4
        ch = base
        while size < resolution:
            blocks.append(StyleBlock(ch, max(ch // 2, 8), style_dim, upsample=True))
            ch = max(ch // 2, 8)
            size *= 2
        self.blocks = nn.ModuleList(blocks)
        self.to_image = nn.Conv2d(ch, 1, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        w = self.mapping(z)
        x = self.constant.expand(z.shape[0], -1, -1, -1)
        for block in self.blocks:
            x = block(x, w)
        return torch.sigmoid(self.to_image(x))


class Discriminator(nn.Module):
    def __init__(self, resolution: int = 64, base: int = 16):
        super().__init__()
        layers = []
        ch_in, ch_out, size = 1, base, resolution
        while size > 4:
            layers += [nn.Conv2d(ch_in, ch_out, 3, stride=2, padding=1),
                       nn.LeakyReLU(0.2)]
            ch_in, ch_out = ch_out, min(ch_out * 2, 128)
            size //= 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(ch_in * size * size, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        return self.head(h.flatten(1)).squeeze(1)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def augment_batch(
    images: torch.Tensor, generator: torch.Generator, max_shift: int = 4
) -> torch.Tensor:
    """Random horizontal flips and integer translations with edge padding."""
    out = images
    flip = torch.rand(images.shape[0], generator=generator) < 0.5
    out = torch.where(flip[:, None, None, None], out.flip(-1), out)
    shifts = torch.randint(
        -max_shift, max_shift + 1, (images.shape[0], 2), generator=generator
    )
    shifted = []
    for i in range(out.shape[0]):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        shifted.append(
            torch.roll(out[i], shifts=(dy, dx), dims=(-2, -1))
        )
    return torch.stack(shifted)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GanTrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr_generator: float = 0.002
    lr_discriminator: float = 0.002
    r1_weight: float = 10.0
    augmentation: bool = True
    init: str = "scratch"  # or "pretrained"
    pretrained_path: Optional[str] = None
    resolution: int = 64
    style_dim: int = 128
    checkpoint_interval: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr_generator < 0 or self.lr_discriminator < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.r1_weight < 0:
            raise ValueError("r1_weight must be >= 0")
        if self.init not in ("scratch", "pretrained"):
            raise ValueError(f"init must be scratch or pretrained, got {self.init!r}")


def _state_hash(state_dict: dict) -> str:
    digest = hashlib.sha256()
    for key in sorted(state_dict):
        digest.update(key.encode())
        digest.update(state_dict[key].detach().numpy().tobytes())
    return digest.hexdigest()[:16]


@dataclass
class GanCheckpoint:
    stage: str
    step: int
    resolution: int
    style_dim: int
    generator_state: dict
    config: dict
    content_hash: str = ""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = _state_hash(self.generator_state)

    @property
    def epoch(self) -> int:
        # scoring histories index checkpoints by one integer; for
        # adversarial models that integer is the training step
        return self.step

    @property
    def ref(self) -> str:
        return f"gan_{self.stage}_s{self.step}.ckpt"

    def build_generator(self) -> Generator:
        base = self.generator_state["constant"].shape[1]
        model = Generator(
            resolution=self.resolution, style_dim=self.style_dim, base=base
        )
        model.load_state_dict(self.generator_state)
        model.eval()
        return model

    def sample(self, n: int, seed: int) -> np.ndarray:
        return sample_gan(self, n, seed)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / self.ref
        torch.save(
            {
                "stage": self.stage,
                "step": self.step,
                "resolution": self.resolution,
                "style_dim": self.style_dim,
                "generator_state": self.generator_state,
                "config": self.config,
                "content_hash": self.content_hash,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "GanCheckpoint":
        return cls(**torch.load(path, weights_only=False))


@dataclass
class GanTrainResult:
    checkpoints: list[GanCheckpoint]
    generator_losses: list[float]
    discriminator_losses: list[float]


def train_gan(
    dataset: np.ndarray,
    config: GanTrainConfig,
    stage: Stage | str = "unstaged",
    out_dir: Optional[str | Path] = None,
    base_channels: int = 32,
) -> GanTrainResult:
    """Alternating optimization on one stage's images (N, H, W) in [0, 1]."""
    data = np.asarray(dataset, dtype=np.float32)
    if data.size == 0:
        raise GanError("empty dataset")
    if data.ndim != 3 or data.shape[1] != config.resolution:
        raise GanError(
            f"dataset must be (N, {config.resolution}, {config.resolution}), "
            f"got {data.shape}"
        )
    stage_name = stage.value if isinstance(stage, Stage) else str(stage)

    torch.manual_seed(config.seed)
    generator_net = Generator(
        resolution=config.resolution, style_dim=config.style_dim, base=base_channels
    )
    discriminator = Discriminator(resolution=config.resolution)

    if config.init == "pretrained":
        if not config.pretrained_path or not Path(config.pretrained_path).exists():
            raise GanError(
                "init=pretrained but no weights at "
                f"{config.pretrained_path!r}; provide a compatible checkpoint"
            )
        loaded = GanCheckpoint.load(config.pretrained_path)
        generator_net.load_state_dict(loaded.generator_state)

    opt_g = torch.optim.Adam(generator_net.parameters(), lr=config.lr_generator,
                             betas=(0.0, 0.99))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_discriminator,
                             betas=(0.0, 0.99))

    sampler = torch.Generator().manual_seed(config.seed)
    images = torch.from_numpy(data).unsqueeze(1)
    n = images.shape[0]

    marks = set(range(config.checkpoint_interval, config.steps + 1,
                      config.checkpoint_interval))
    marks.add(config.steps)

    checkpoints: list[GanCheckpoint] = []
    g_losses: list[float] = []
    d_losses: list[float] = []

    def make_checkpoint(step: int) -> GanCheckpoint:
        return GanCheckpoint(
            stage=stage_name,
            step=step,
            resolution=config.resolution,
            style_dim=config.style_dim,
            generator_state={
                k: v.clone() for k, v in generator_net.state_dict().items()
            },
            config={
                "steps": config.steps,
                "batch_size": config.batch_size,
                "lr_generator": config.lr_generator,
                "lr_discriminator": config.lr_discriminator,
                "r1_weight": config.r1_weight,
                "augmentation": config.augmentation,
                "init": config.init,
                "seed": config.seed,
            },
        )

    for step in range(1, config.steps + 1):
        idx = torch.randint(0, n, (config.batch_size,), generator=sampler)
        real = images[idx]
        if config.augmentation:
            real = augment_batch(real, sampler)

        # discriminator update with R1 on the real batch
        z = torch.randn(config.batch_size, config.style_dim, generator=sampler)
        with torch.no_grad():
            fake = generator_net(z)
        real = real.requires_grad_(True)
        real_logits = discriminator(real)
        fake_logits = discriminator(fake)
        d_loss = discriminator_loss(real_logits, fake_logits)
        if config.r1_weight > 0:
            (grad_real,) = torch.autograd.grad(
                real_logits.sum(), real, create_graph=True
            )
            d_loss = d_loss + r1_penalty(grad_real, config.r1_weight)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # generator update
        z = torch.randn(config.batch_size, config.style_dim, generator=sampler)
        g_loss = generator_loss(discriminator(generator_net(z)))
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        g_losses.append(float(g_loss.detach()))
        d_losses.append(float(d_loss.detach()))

        if step in marks:
            checkpoint = make_checkpoint(step)
            if out_dir is not None:
                checkpoint.save(out_dir)
            checkpoints.append(checkpoint)

    return GanTrainResult(
        checkpoints=checkpoints,
        generator_losses=g_losses,
        discriminator_losses=d_losses,
    )


def sample_gan(checkpoint: GanCheckpoint, n: int, seed: int) -> np.ndarray:
    """Seeded generator samples as (n, H, W) pixels in [0, 1]."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    model = checkpoint.build_generator()
    generator = torch.Generator().manual_seed(seed)
    outputs = []
    with torch.no_grad():
        for start in range(0, n, 64):
            count = min(64, n - start)
            z = torch.randn(count, checkpoint.style_dim, generator=generator)
            outputs.append(model(z).clamp(0.0, 1.0).squeeze(1))
    return torch.cat(outputs).numpy().astype(np.float32)
