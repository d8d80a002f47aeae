"""Procedural toy embryo images for desk-scale runs.

Each image is a grayscale field with a bright circular "zona" ring enclosing
stage-coded structures: 2/4/8 separated cell blobs, a compacted morula mass,
or a cavity-bearing blastocyst pattern (trophectoderm ring plus an inner
cell mass attached to its wall). The renderer keeps a ledger of what it
drew, including the pre-noise structure mask, so label fidelity can be
checked by an independent connected-component count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .imaging import save_png
from .records import DatasetManifest, ImageRecord, Source, Stage, STAGES

# Expected connected components in the structure mask, per stage.
STRUCTURE_COUNTS: dict[Stage, int] = {
    Stage.TWO_CELL: 2,
    Stage.FOUR_CELL: 4,
    Stage.EIGHT_CELL: 8,
    Stage.MORULA: 1,
    Stage.BLASTOCYST: 1,
}

# Blob ring radius and blob radius for the cleavage stages, as fractions of
# the image side. Chosen so neighboring blobs never touch.
_CLEAVAGE_GEOMETRY = {
    Stage.TWO_CELL: (0.17, 0.13),
    Stage.FOUR_CELL: (0.19, 0.105),
    Stage.EIGHT_CELL: (0.22, 0.062),
}

# Nominal hours post-fertilization at which each stage is observed.
STAGE_HOURS: dict[Stage, float] = {
    Stage.TWO_CELL: 27.0,
    Stage.FOUR_CELL: 40.0,
    Stage.EIGHT_CELL: 55.0,
    Stage.MORULA: 92.0,
    Stage.BLASTOCYST: 110.0,
}


@dataclass
class ToyImage:
    """Rendered image plus the generator's own ledger."""

    pixels: np.ndarray  # float32 (R, R) in [0, 1]
    structure_mask: np.ndarray  # bool (R, R), pre-noise, zona excluded
    stage: Stage
    expected_components: int
    blob_centers: list[tuple[float, float]] = field(default_factory=list)


def _disk(grid_y: np.ndarray, grid_x: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    return (grid_x - cx) ** 2 + (grid_y - cy) ** 2 <= r * r


def render_toy_image(stage: Stage, resolution: int, rng: np.random.Generator) -> ToyImage:
    if resolution < 64:
        raise ValueError(f"resolution must be >= 64, got {resolution}")
    R = resolution
    yy, xx = np.mgrid[0:R, 0:R].astype(np.float64)
    cy = R / 2 + rng.uniform(-0.03, 0.03) * R
    cx = R / 2 + rng.uniform(-0.03, 0.03) * R

    pixels = np.full((R, R), 0.14, dtype=np.float64)
    dist = np.hypot(yy - cy, xx - cx)
    pixels -= 0.05 * (dist / R) ** 2  # gentle vignette

    zona_outer = (0.42 + rng.uniform(-0.01, 0.01)) * R
    zona_inner = zona_outer - 0.045 * R
    interior = dist <= zona_inner
    pixels[interior] = 0.26

    mask = np.zeros((R, R), dtype=bool)
    centers: list[tuple[float, float]] = []

    if stage in _CLEAVAGE_GEOMETRY:
        ring_frac, blob_frac = _CLEAVAGE_GEOMETRY[stage]
        n = STRUCTURE_COUNTS[stage]
        theta0 = rng.uniform(0, 2 * np.pi)
        for k in range(n):
            theta = theta0 + 2 * np.pi * k / n + rng.uniform(-0.05, 0.05)
            rho = ring_frac * R * (1 + rng.uniform(-0.03, 0.03))
            by = cy + rho * np.sin(theta)
            bx = cx + rho * np.cos(theta)
            br = blob_frac * R * (1 + rng.uniform(-0.04, 0.04))
            blob = _disk(yy, xx, by, bx, br)
            mask |= blob
            pixels[blob] = 0.52 + rng.uniform(-0.04, 0.04)
            nucleus = _disk(yy, xx, by, bx, br * 0.25)
            pixels[nucleus] = 0.62
            centers.append((by, bx))
    elif stage is Stage.MORULA:
        # Random-walk chain of overlapping disks: each step is shorter than a
        # disk diameter, so the union stays one connected component.
        br = 0.06 * R
        by, bx = cy, cx
        for _ in range(14):
            blob = _disk(yy, xx, by, bx, br)
            mask |= blob
            pixels[blob] = 0.48 + rng.uniform(-0.03, 0.03)
            centers.append((by, bx))
            step = rng.uniform(0.4, 1.3) * br
            angle = rng.uniform(0, 2 * np.pi)
            ny = by + step * np.sin(angle)
            nx = bx + step * np.cos(angle)
            # keep the mass inside the zona interior
            if np.hypot(ny - cy, nx - cx) < 0.18 * R:
                by, bx = ny, nx
    elif stage is Stage.BLASTOCYST:
        cavity = _disk(yy, xx, cy, cx, 0.30 * R)
        pixels[cavity] = 0.19  # fluid-filled cavity, darker than the interior
        troph_outer = 0.33 * R
        troph_inner = 0.27 * R
        troph = _disk(yy, xx, cy, cx, troph_outer) & ~_disk(yy, xx, cy, cx, troph_inner)
        mask |= troph
        pixels[troph] = 0.50
        icm_theta = rng.uniform(0, 2 * np.pi)
        icm_rho = 0.26 * R
        iy = cy + icm_rho * np.sin(icm_theta)
        ix = cx + icm_rho * np.cos(icm_theta)
        icm = _disk(yy, xx, iy, ix, 0.095 * R)
        mask |= icm
        pixels[icm] = 0.58
        centers.append((iy, ix))
    else:  # pragma: no cover - exhaustive over STAGES
        raise ValueError(f"unknown stage {stage}")

    zona = (dist <= zona_outer) & (dist > zona_inner)
    pixels[zona] = 0.60

    # illumination tilt + speckle
    tilt = rng.uniform(0, 2 * np.pi)
    gradient = 0.03 * ((xx - cx) * np.cos(tilt) + (yy - cy) * np.sin(tilt)) / R
    pixels = pixels + gradient + rng.normal(0.0, 0.02, size=(R, R))
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)

    return ToyImage(
        pixels=pixels,
        structure_mask=mask,
        stage=stage,
        expected_components=STRUCTURE_COUNTS[stage],
        blob_centers=centers,
    )


def _stage_rng(seed: int, stage: Stage) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stage.ordinal]))


def generate_toy_dataset(
    stage: Stage,
    count: int,
    seed: int,
    resolution: int,
    out_dir: Optional[str | Path] = None,
) -> DatasetManifest:
    """Render ``count`` single-frame toy sequences for one stage. When
    ``out_dir`` is given, PNGs land under ``<out_dir>/<stage>/``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = _stage_rng(seed, stage)
    records = []
    for i in range(count):
        image = render_toy_image(stage, resolution, rng)
        seq_id = f"toyseq-{stage.value}-{seed}-{i:04d}"
        rel_path = f"{stage.value}/{seq_id}_f0.png"
        if out_dir is not None:
            save_png(image.pixels, Path(out_dir) / rel_path)
        records.append(
            ImageRecord(
                image_id=f"{seq_id}_f0",
                sequence_id=seq_id,
                stage=stage,
                source=Source.TOY,
                path=rel_path,
                hours_post_fertilization=STAGE_HOURS[stage],
                fragmentation_pct=round(float(rng.uniform(0.0, 12.0)), 2),
            )
        )
    return DatasetManifest.from_records(
        records, provenance=f"toy stage={stage.value} seed={seed}"
    )


def render_toy_images(
    stage: Stage, count: int, seed: int, resolution: int
) -> list[ToyImage]:
    """Same stream as :func:`generate_toy_dataset`, but returning the full
    ledgers instead of writing files."""
    rng = _stage_rng(seed, stage)
    return [render_toy_image(stage, resolution, rng) for _ in range(count)]


def build_toy_corpus(
    sequences: int,
    seed: int,
    resolution: int,
    out_dir: Optional[str | Path] = None,
) -> DatasetManifest:
    """Build a corpus of toy time-lapse sequences, each contributing one
    frame per stage, mirroring how a real incubator video spans stages.
    Yields ``sequences`` images per stage."""
    if sequences < 1:
        raise ValueError(f"sequences must be >= 1, got {sequences}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(STAGES)]))
    records = []
    for i in range(sequences):
        seq_id = f"toyseq-{seed}-{i:04d}"
        fragmentation = round(float(rng.uniform(0.0, 12.0)), 2)
        for stage in STAGES:
            image = render_toy_image(stage, resolution, rng)
            rel_path = f"{stage.value}/{seq_id}_f{stage.ordinal}.png"
            if out_dir is not None:
                save_png(image.pixels, Path(out_dir) / rel_path)
            records.append(
                ImageRecord(
                    image_id=f"{seq_id}_f{stage.ordinal}",
                    sequence_id=seq_id,
                    stage=stage,
                    source=Source.TOY,
                    path=rel_path,
                    hours_post_fertilization=STAGE_HOURS[stage]
                    + round(float(rng.uniform(-2.0, 2.0)), 2),
                    fragmentation_pct=fragmentation,
                )
            )
    return DatasetManifest.from_records(records, provenance=f"toy corpus seed={seed}")
