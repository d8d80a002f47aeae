"""Stage classification on real/synthetic mixtures.

Handles:
- mixture assembly from real and per-family synthetic pools
- resize + mix-statistics normalization
- three classifier families (small conv, residual conv, patch attention)
- early-stopped training that keeps the best validation snapshot
- evaluation into the shared metrics report
- grid runs over mixture specs and seeds with CSV/plot emission
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import load_batch
from .metrics import AggregatedReport, MetricsReport, aggregate_seeds, compute_report
from .records import DatasetManifest, ImageRecord, Split, Stage, STAGES


class MixError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# mixture assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixSpec:
    real_n: int
    gan_n: int
    ldm_n: int

    def __post_init__(self):
        for name in ("real_n", "gan_n", "ldm_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.real_n + self.gan_n + self.ldm_n == 0:
            raise ValueError("mix must request at least one image per stage")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.real_n, self.gan_n, self.ldm_n)


def _training_candidates(manifest: DatasetManifest, stage: Stage) -> list[ImageRecord]:
    """Stage records that are safe to train on: nothing from a sequence
    that contributed any test image."""
    test_sequences = {
        r.sequence_id for r in manifest.records if r.split is Split.TEST
    }
    return [
        r
        for r in manifest.records_for(stage=stage)
        if r.split is not Split.TEST and r.sequence_id not in test_sequences
    ]


def build_mix(
    pools: dict[str, Optional[DatasetManifest]],
    spec: MixSpec,
    seed: int,
) -> DatasetManifest:
    """Sample a class-balanced training manifest without replacement.

    ``pools`` maps "real"/"gan"/"ldm" to manifests; a pool may be None
    when its requested count is zero."""
    requested = {"real": spec.real_n, "gan": spec.gan_n, "ldm": spec.ldm_n}
    chosen: list[ImageRecord] = []
    for source_name, count in requested.items():
        if count == 0:
            continue
        pool = pools.get(source_name)
        if pool is None:
            raise MixError(f"mix requests {count} {source_name} images but the "
                           f"{source_name} pool is missing")
        for stage in STAGES:
            candidates = _training_candidates(pool, stage)
            if len(candidates) < count:
                raise MixError(
                    f"mix requires {count} {source_name} images for stage "
                    f"{stage.value}, pool has {len(candidates)}"
                )
            rng = random.Random(seed * 1000003 + stage.ordinal * 101 + len(source_name))
            picked = rng.sample(sorted(candidates, key=lambda r: r.image_id), count)
            chosen.extend(picked)
    manifest = DatasetManifest.from_records(
        chosen, provenance=f"mix real={spec.real_n} gan={spec.gan_n} "
                           f"ldm={spec.ldm_n} seed={seed}"
    )
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def resize_images(images: np.ndarray, resolution: int) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 2:
        images = images[None]
    if images.shape[1] == resolution and images.shape[2] == resolution:
        return images
    tensor = torch.from_numpy(images).unsqueeze(1)
    resized = F.interpolate(
        tensor, size=(resolution, resolution), mode="bilinear", align_corners=False
    )
    return resized.squeeze(1).numpy()


def mix_statistics(images: np.ndarray) -> tuple[float, float]:
    """Scalar mean and std over every pixel of the training mix. Computed
    on the mix only; test images reuse these numbers."""
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        raise ValueError("cannot compute statistics of an empty mix")
    return float(images.mean()), float(images.std())


def preprocess(
    images: np.ndarray, resolution: int, mean: float, std: float
) -> np.ndarray:
    """Resize then normalize with the training-mix statistics."""
    resized = resize_images(images, resolution)
    return ((resized - mean) / max(std, 1e-6)).astype(np.float32)


# ---------------------------------------------------------------------------
# classifier families
# ---------------------------------------------------------------------------

class ConvSmall(nn.Module):
    def __init__(self, n_classes: int = 5, base: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, base, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, base * 2, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(base * 2, base * 4, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(base * 4, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x))
        return F.silu(x + self.conv2(h))


class ConvResidual(nn.Module):
    def __init__(self, n_classes: int = 5, base: int = 16):
        super().__init__()
        self.stem = nn.Conv2d(1, base, 3, stride=2, padding=1)
        self.block1 = _ResidualBlock(base)
        self.down = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)
        self.block2 = _ResidualBlock(base * 2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(base * 2, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.stem(x))
        h = self.block1(h)
        h = F.silu(self.down(h))
        h = self.block2(h)
        return self.head(self.pool(h).flatten(1))


class PatchAttention(nn.Module):
    """Patch embedding plus one self-attention layer over patch tokens."""

    def __init__(self, n_classes: int = 5, patch: int = 8, dim: int = 64):
        super().__init__()
        self.patch = patch
        self.embed = nn.Conv2d(1, dim, kernel_size=patch, stride=patch)
        self.encoder = nn.TransformerEncoderLayer(
            d_model=dim, nhead=4, dim_feedforward=dim * 2, batch_first=True,
            dropout=0.0,
        )
        self.head = nn.Linear(dim, n_classes)
        self.positional: Optional[nn.Parameter] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.embed(x).flatten(2).transpose(1, 2)
        if self.positional is None or self.positional.shape[1] != tokens.shape[1]:
            raise TrainingError(
                "positional embedding not initialized for this resolution; "
                "construct via build_classifier"
            )
        encoded = self.encoder(tokens + self.positional)
        return self.head(encoded.mean(dim=1))


CLASSIFIER_FAMILIES = ("conv_small", "conv_residual", "attention_patch")


def build_classifier(family: str, resolution: int, n_classes: int = 5) -> nn.Module:
    if family == "conv_small":
        return ConvSmall(n_classes)
    if family == "conv_residual":
        return ConvResidual(n_classes)
    if family == "attention_patch":
        model = PatchAttention(n_classes)
        if resolution % model.patch != 0:
            raise ValueError(
                f"resolution {resolution} not divisible by patch {model.patch}"
            )
        tokens = (resolution // model.patch) ** 2
        model.positional = nn.Parameter(torch.zeros(1, tokens, 64))
        return model
    raise ValueError(
        f"unknown family {family!r}; known: {', '.join(CLASSIFIER_FAMILIES)}"
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    family: str = "conv_small"
    init: str = "scratch"
    pretrained_path: Optional[str] = None
    batch_size: int = 32
    learning_rate: float = 1e-4
    patience_epochs: int = 30
    input_resolution: int = 224
    max_epochs: int = 200
    val_fraction: float = 0.1
    lr_factor: float = 0.1
    lr_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.family not in CLASSIFIER_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.init not in ("scratch", "pretrained"):
            raise ValueError("init must be scratch or pretrained")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.input_resolution < 32:
            raise ValueError("input_resolution must be >= 32")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must lie in (0, 1)")


class EarlyStopper:
    """Stops after ``patience`` epochs without a validation-loss
    improvement; remembers which epoch held the best loss."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch: Optional[int] = None
        self.stale = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch; True means stop now."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainedClassifier:
    model: nn.Module
    family: str
    resolution: int
    mean: float
    std: float
    best_epoch: int
    val_losses: list[float]
    train_losses: list[float]

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Argmax class per image; ties resolve to the lowest ordinal."""
        inputs = preprocess(images, self.resolution, self.mean, self.std)
        tensor = torch.from_numpy(inputs).unsqueeze(1)
        self.model.eval()
        outputs = []
        with torch.no_grad():
            for start in range(0, tensor.shape[0], 256):
                logits = self.model(tensor[start : start + 256])
                outputs.append(logits.argmax(dim=1))
        return torch.cat(outputs).numpy()


def _stratified_split(
    labels: np.ndarray, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        n_val = max(1, int(round(len(members) * fraction)))
        if n_val >= len(members):
            n_val = len(members) - 1
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    return np.sort(np.array(train_idx)), np.sort(np.array(val_idx))


def train_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    config: ClassifierConfig,
) -> TrainedClassifier:
    """Cross-entropy training with plateau LR decay and early stopping.

    A stratified ``val_fraction`` slice of the mix is held out for the
    stopping rule; the returned model is the lowest-validation-loss
    snapshot, not the last epoch."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.size == 0:
        raise TrainingError("empty training mix")
    if images.shape[0] != labels.shape[0]:
        raise TrainingError("images and labels disagree on sample count")
    if images.shape[0] < 10:
        raise TrainingError("mix too small to carve a validation subset")

    mean, std = mix_statistics(images)
    prepared = preprocess(images, config.input_resolution, mean, std)

    train_idx, val_idx = _stratified_split(labels, config.val_fraction, config.seed)
    x_train = torch.from_numpy(prepared[train_idx]).unsqueeze(1)
    y_train = torch.from_numpy(labels[train_idx])
    x_val = torch.from_numpy(prepared[val_idx]).unsqueeze(1)
    y_val = torch.from_numpy(labels[val_idx])

    torch.manual_seed(config.seed)
    model = build_classifier(config.family, config.input_resolution)
    if config.init == "pretrained":
        if not config.pretrained_path or not Path(config.pretrained_path).exists():
            raise TrainingError(
                f"init=pretrained but no weights at {config.pretrained_path!r}"
            )
        model.load_state_dict(torch.load(config.pretrained_path, weights_only=True))

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=config.lr_factor, patience=config.lr_patience
    )
    stopper = EarlyStopper(config.patience_epochs)
    shuffler = torch.Generator().manual_seed(config.seed)

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_epoch = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = torch.randperm(x_train.shape[0], generator=shuffler)
        total, batches = 0.0, 0
        for start in range(0, x_train.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = model(x_train[idx])
            loss = F.cross_entropy(logits, y_train[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        train_losses.append(total / batches)

        model.eval()
        with torch.no_grad():
            val_loss = float(F.cross_entropy(model(x_val), y_val))
        val_losses.append(val_loss)
        scheduler.step(val_loss)

        improved = val_loss < stopper.best_loss
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            best_epoch = epoch
        if stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainedClassifier(
        model=model,
        family=config.family,
        resolution=config.input_resolution,
        mean=mean,
        std=std,
        best_epoch=best_epoch,
        val_losses=val_losses,
        train_losses=train_losses,
    )


def evaluate(
    classifier: TrainedClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    seed: Optional[int] = None,
) -> MetricsReport:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= len(STAGES)):
        raise ValueError(
            f"labels must index the {len(STAGES)} stages, "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    predictions = classifier.predict(images)
    return compute_report(labels, predictions, n_classes=len(STAGES), seed=seed)


# ---------------------------------------------------------------------------
# grid runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRow:
    spec: MixSpec
    seed: int
    report: MetricsReport


@dataclass
class GridResult:
    rows: dict[str, list[GridRow]]
    aggregated: dict[str, list[tuple[MixSpec, AggregatedReport]]]


def _manifest_arrays(
    manifest: DatasetManifest, image_root: str | Path
) -> tuple[np.ndarray, np.ndarray]:
    root = Path(image_root)
    images = load_batch([root / r.path for r in manifest.records])
    labels = np.array([r.stage.ordinal for r in manifest.records], dtype=np.int64)
    return images, labels


def run_grid(
    grid: Sequence[MixSpec],
    pools: dict[str, Optional[DatasetManifest]],
    test_sets: dict[str, tuple[np.ndarray, np.ndarray]],
    config: ClassifierConfig,
    seeds: Sequence[int],
    image_root: str | Path,
    out_dir: Optional[str | Path] = None,
    z: float = 1.96,
    n_override: Optional[int] = None,
    make_plots: bool = False,
) -> GridResult:
    """Train one classifier per (mix spec, seed) and score each test set.

    Emits a per-run CSV and an aggregated CSV per test set under
    ``out_dir``; with ``make_plots`` also a mean-accuracy line chart."""
    rows: dict[str, list[GridRow]] = {name: [] for name in test_sets}
    for spec in grid:
        for seed in seeds:
            mix = build_mix(pools, spec, seed)
            images, labels = _manifest_arrays(mix, image_root)
            classifier = train_classifier(
                images, labels, replace(config, seed=seed)
            )
            for name, (test_images, test_labels) in test_sets.items():
                report = evaluate(classifier, test_images, test_labels, seed=seed)
                rows[name].append(GridRow(spec=spec, seed=seed, report=report))

    aggregated: dict[str, list[tuple[MixSpec, AggregatedReport]]] = {
        name: [] for name in test_sets
    }
    for name in test_sets:
        for spec in grid:
            spec_reports = [r.report for r in rows[name] if r.spec == spec]
            if len(spec_reports) >= 2:
                aggregated[name].append(
                    (spec, aggregate_seeds(spec_reports, z=z, n_override=n_override))
                )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in test_sets:
            _write_rows_csv(rows[name], out_dir / f"grid_{name}.csv")
            _write_aggregated_csv(
                aggregated[name], out_dir / f"grid_{name}_aggregated.csv"
            )
            if make_plots:
                _plot_accuracy(
                    aggregated[name], rows[name], out_dir / f"accuracy_{name}.png"
                )

    return GridResult(rows=rows, aggregated=aggregated)


def _write_rows_csv(rows: list[GridRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec_real", "spec_gan", "spec_ldm", "seed",
             "accuracy", "f1", "precision", "recall", "mcc"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.spec.real_n,
                    row.spec.gan_n,
                    row.spec.ldm_n,
                    row.seed,
                    f"{row.report.accuracy:.6f}",
                    f"{row.report.f1:.6f}",
                    f"{row.report.precision:.6f}",
                    f"{row.report.recall:.6f}",
                    f"{row.report.mcc:.6f}",
                ]
            )


def _write_aggregated_csv(
    aggregated: list[tuple[MixSpec, AggregatedReport]], path: Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec_real", "spec_gan", "spec_ldm", "metric",
             "mean", "std", "ci_low", "ci_high", "n", "z"]
        )
        for spec, agg in aggregated:
            for metric, summary in agg.metrics.items():
                writer.writerow(
                    [
                        spec.real_n, spec.gan_n, spec.ldm_n, metric,
                        f"{summary.mean:.6f}", f"{summary.std:.6f}",
                        f"{summary.ci_low:.6f}", f"{summary.ci_high:.6f}",
                        agg.n, agg.z,
                    ]
                )


def _plot_accuracy(
    aggregated: list[tuple[MixSpec, AggregatedReport]],
    rows: list[GridRow],
    path: Path,
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    if aggregated:
        labels = [f"{s.real_n}/{s.gan_n}/{s.ldm_n}" for s, _ in aggregated]
        means = [a.metrics["accuracy"].mean for _, a in aggregated]
        low = [a.metrics["accuracy"].ci_low for _, a in aggregated]
        high = [a.metrics["accuracy"].ci_high for _, a in aggregated]
        x = range(len(labels))
        ax.plot(x, means, marker="o")
        ax.fill_between(x, low, high, alpha=0.2)
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels, rotation=45, ha="right")
    else:
        by_spec: dict[tuple, list[float]] = {}
        for row in rows:
            by_spec.setdefault(row.spec.as_tuple(), []).append(row.report.accuracy)
        labels = [f"{r}/{g}/{l}" for r, g, l in by_spec]
        ax.plot(range(len(labels)), [np.mean(v) for v in by_spec.values()], marker="o")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_xlabel("mix (real/gan/ldm per stage)")
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
