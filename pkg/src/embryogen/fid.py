"""Frechet-distance scoring of generative checkpoints.

Handles:
- pluggable feature extractors (a seeded random-projection embedding for
  self-contained runs, plus the conventional 2048-dim embedding when
  weights are provisioned)
- Gaussian moment estimation with unbiased covariance
- the Frechet distance with a numerically guarded matrix square root
- per-checkpoint scoring histories and lowest-score selection
- CSV score reports
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .imaging import block_mean_resize, load_batch
from .records import DatasetManifest

EIGENVALUE_TOLERANCE = -1e-8

# fixed projection seed; changing it invalidates every recorded score
_POOL_SEED = 7_318_241
_POOL_SIDE = 16
_POOL_HIDDEN = 128
_POOL_DIM = 64

INCEPTION_WEIGHTS_ENV = "EMBRYOGEN_INCEPTION_WEIGHTS"


class ExtractorError(RuntimeError):
    """Unknown extractor id, or a declared extractor missing its weights."""


class FidError(RuntimeError):
    """Frechet distance could not be computed from the given statistics."""


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"sample count must be >= 1, got {self.n}")
        if self.mu.ndim != 1:
            raise ValueError("mu must be a vector")
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(
                f"sigma shape {self.sigma.shape} does not match "
                f"dimension {self.mu.size}"
            )


# ---------------------------------------------------------------------------
# feature extractors
# ---------------------------------------------------------------------------

_pool_weights_cache: dict[str, np.ndarray] = {}


def _pool_weights() -> tuple[np.ndarray, np.ndarray]:
    if not _pool_weights_cache:
        rng = np.random.default_rng(_POOL_SEED)
        flat = _POOL_SIDE * _POOL_SIDE
        _pool_weights_cache["w1"] = rng.standard_normal((flat, _POOL_HIDDEN)) / np.sqrt(
            flat
        )
        _pool_weights_cache["w2"] = rng.standard_normal(
            (_POOL_HIDDEN, _POOL_DIM)
        ) / np.sqrt(_POOL_HIDDEN)
    return _pool_weights_cache["w1"], _pool_weights_cache["w2"]


def _toy_pool_extractor(images: np.ndarray) -> np.ndarray:
    """Deterministic 64-dim embedding: area pooling to 16x16 followed by a
    fixed random projection with one tanh nonlinearity. No learned weights,
    so identical inputs always embed identically across machines."""
    pooled = block_mean_resize(images, _POOL_SIDE).astype(np.float64)
    flat = (pooled.reshape(pooled.shape[0], -1) - 0.5) * 2.0
    w1, w2 = _pool_weights()
    return np.tanh(flat @ w1) @ w2


def _inception_extractor(images: np.ndarray) -> np.ndarray:
    weights = os.environ.get(INCEPTION_WEIGHTS_ENV, "")
    if not weights or not Path(weights).exists():
        raise ExtractorError(
            "extractor 'inception-2048' requires pretrained weights; set "
            f"{INCEPTION_WEIGHTS_ENV} to a TorchScript file to enable it"
        )
    import torch

    module = torch.jit.load(weights, map_location="cpu")
    module.eval()
    batch = torch.from_numpy(np.repeat(images[:, None, :, :], 3, axis=1)).float()
    with torch.no_grad():
        feats = module(batch)
    return feats.numpy().astype(np.float64)


EXTRACTORS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "toy-pool": _toy_pool_extractor,
    "inception-2048": _inception_extractor,
}


def embed_images(images, extractor: str = "toy-pool") -> np.ndarray:
    """Embed a stack of grayscale images, one feature row per image."""
    if extractor not in EXTRACTORS:
        known = ", ".join(sorted(EXTRACTORS))
        raise ExtractorError(f"unknown extractor {extractor!r}; known: {known}")
    if isinstance(images, (list, tuple)):
        images = np.stack([np.asarray(im) for im in images])
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ValueError(f"expected (N, H, W) images, got shape {images.shape}")
    if images.size == 0:
        raise ValueError("cannot embed an empty image set")
    lo, hi = float(images.min()), float(images.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")
    return EXTRACTORS[extractor](images)


# ---------------------------------------------------------------------------
# Gaussian moments and the Frechet distance
# ---------------------------------------------------------------------------

def gaussian_stats(features: np.ndarray) -> GaussianStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a nonempty (n, d) matrix")
    n = features.shape[0]
    mu = features.mean(axis=0)
    if n == 1:
        sigma = np.zeros((features.shape[1], features.shape[1]))
    else:
        sigma = np.cov(features, rowvar=False, ddof=1)
        sigma = np.atleast_2d(sigma)
        sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=sigma, n=n)


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues inside (EIGENVALUE_TOLERANCE, 0) are treated as exact
    zeros; anything below the tolerance is a genuine failure."""
    sym = (matrix + matrix.T) / 2.0
    eigenvalue, eigenvector = np.linalg.eigh(sym)
    if eigenvalue.min() < EIGENVALUE_TOLERANCE:
        raise FidError(
            "matrix is not positive semidefinite: smallest eigenvalue "
            f"{eigenvalue.min():.3e}, largest {eigenvalue.max():.3e}"
        )
    eigenvalue = np.clip(eigenvalue, 0.0, None)
    return (eigenvector * np.sqrt(eigenvalue)) @ eigenvector.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    Identical stats short-circuit to exactly 0.0, and the pair is put in
    a canonical order first so both argument orders produce the same
    floating-point result."""
    if a.mu.shape != b.mu.shape:
        raise ValueError(
            f"dimension mismatch: {a.mu.shape[0]} vs {b.mu.shape[0]}"
        )
    if np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma):
        return 0.0
    if (b.mu.tobytes() + b.sigma.tobytes()) < (a.mu.tobytes() + a.sigma.tobytes()):
        a, b = b, a

    mean_term = float(np.sum((a.mu - b.mu) ** 2))
    root_a = psd_sqrt(a.sigma)
    product = root_a @ b.sigma @ root_a
    product = (product + product.T) / 2.0
    eigenvalue = np.linalg.eigvalsh(product)
    if eigenvalue.min() < EIGENVALUE_TOLERANCE:
        raise FidError(
            "covariance product has a significantly negative eigenvalue "
            f"({eigenvalue.min():.3e}); condition numbers: "
            f"sigma_a {np.linalg.cond(a.sigma):.3e}, "
            f"sigma_b {np.linalg.cond(b.sigma):.3e}"
        )
    eigenvalue = np.clip(eigenvalue, 0.0, None)
    trace_term = float(
        np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sum(np.sqrt(eigenvalue))
    )
    return max(mean_term + trace_term, 0.0)


def fid_between_sets(
    images_a, images_b, extractor: str = "toy-pool"
) -> float:
    """Frechet distance between two image sets under one extractor."""
    stats_a = gaussian_stats(embed_images(images_a, extractor))
    stats_b = gaussian_stats(embed_images(images_b, extractor))
    return frechet_distance(stats_a, stats_b)


# ---------------------------------------------------------------------------
# per-checkpoint scoring and selection
# ---------------------------------------------------------------------------

class SamplingCheckpoint(Protocol):
    """Anything scoreable: a label, a position in training, and a sampler."""

    ref: str
    epoch: int

    def sample(self, n: int, seed: int) -> np.ndarray: ...


@dataclass(frozen=True)
class FidEntry:
    epoch: int  # training step for adversarial checkpoints
    fid: float
    ref: str
    n_real: int
    n_fake: int
    extractor: str


@dataclass
class FidHistory:
    stage: str
    family: str  # "ldm" or "gan"
    entries: list[FidEntry] = field(default_factory=list)

    def add(self, entry: FidEntry) -> None:
        if self.entries and entry.epoch <= self.entries[-1].epoch:
            raise ValueError(
                f"history epochs must be strictly increasing; got {entry.epoch} "
                f"after {self.entries[-1].epoch}"
            )
        self.entries.append(entry)


def fid_of_checkpoint(
    checkpoint: SamplingCheckpoint,
    real: DatasetManifest | np.ndarray,
    n_samples: int,
    extractor: str = "toy-pool",
    seed: int = 0,
    image_root: Optional[str | Path] = None,
) -> FidEntry:
    """Sample the checkpoint and score it against a real reference set.

    The reference is the training split by convention; callers pass either
    a pixel stack or a manifest plus the directory its paths resolve in."""
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    if isinstance(real, DatasetManifest):
        root = Path(image_root) if image_root is not None else Path(".")
        real_images = load_batch([root / r.path for r in real.records])
    else:
        real_images = np.asarray(real)
    fake_images = checkpoint.sample(n_samples, seed)
    fid = fid_between_sets(real_images, fake_images, extractor)
    return FidEntry(
        epoch=checkpoint.epoch,
        fid=fid,
        ref=checkpoint.ref,
        n_real=int(real_images.shape[0]),
        n_fake=int(fake_images.shape[0]),
        extractor=extractor,
    )


def select_best(history: FidHistory) -> FidEntry:
    """Entry with the lowest score; ties go to the earliest checkpoint."""
    if not history.entries:
        raise ValueError(f"empty history for {history.family}/{history.stage}")
    return min(history.entries, key=lambda e: (e.fid, e.epoch))


def write_fid_report(histories: Sequence[FidHistory], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stage", "family", "epoch", "fid", "n_real", "n_fake", "extractor"]
        )
        for history in histories:
            for e in history.entries:
                writer.writerow(
                    [
                        history.stage,
                        history.family,
                        e.epoch,
                        f"{e.fid:.6g}",
                        e.n_real,
                        e.n_fake,
                        e.extractor,
                    ]
                )


def read_fid_report(path: str | Path) -> list[FidHistory]:
    histories: dict[tuple[str, str], FidHistory] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["stage"], row["family"])
            if key not in histories:
                histories[key] = FidHistory(stage=row["stage"], family=row["family"])
            histories[key].add(
                FidEntry(
                    epoch=int(row["epoch"]),
                    fid=float(row["fid"]),
                    ref="",
                    n_real=int(row["n_real"]),
                    n_fake=int(row["n_fake"]),
                    extractor=row["extractor"],
                )
            )
    return list(histories.values())
