"""Manifest construction: frame labeling, fragmentation filtering,
sequence-level splitting, and the external blastocyst set loader."""

from __future__ import annotations

import csv
import random
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .records import (
    DatasetManifest,
    ImageRecord,
    ManifestError,
    Source,
    Split,
    Stage,
    STAGES,
)


class AnnotationError(ValueError):
    """Bad stage-onset annotations for a sequence."""


class SplitError(ValueError):
    """Sequence-level split cannot satisfy the requested per-stage quotas."""


class ExternalDatasetError(ValueError):
    """External blastocyst directory does not match the documented layout."""


def build_manifest(
    frames: Sequence[tuple[str, float, str]],
    annotations: Mapping[str, Sequence[tuple[Stage, float]]],
    source: Source = Source.VOLVAT,
    provenance: str = "",
) -> DatasetManifest:
    """Label frames by the stage-onset interval containing their timestamp.

    ``frames`` are (sequence_id, timestamp_hours, path) tuples; ``annotations``
    map a sequence to its (stage, onset_hours) list sorted by onset. A frame
    falls into [onset_i, onset_{i+1}) of its sequence; the last onset's
    interval is open-ended. Frames before the first onset, or in sequences
    without annotations, are omitted.
    """
    for seq_id, spans in annotations.items():
        onsets = [onset for _, onset in spans]
        for a, b in zip(onsets, onsets[1:]):
            if b <= a:
                raise AnnotationError(
                    f"sequence {seq_id!r}: onsets must be strictly increasing "
                    f"(got {a} then {b})"
                )

    records = []
    for seq_id, timestamp, path in frames:
        spans = annotations.get(seq_id)
        if not spans:
            continue
        stage = _stage_at(spans, timestamp)
        if stage is None:
            continue
        records.append(
            ImageRecord(
                image_id=Path(path).stem,
                sequence_id=seq_id,
                stage=stage,
                source=source,
                path=str(path),
                hours_post_fertilization=timestamp,
            )
        )
    return DatasetManifest.from_records(records, provenance=provenance)


def _stage_at(spans: Sequence[tuple[Stage, float]], t: float) -> Optional[Stage]:
    stage = None
    for s, onset in spans:
        if t >= onset:
            stage = s
        else:
            break
    return stage


def filter_fragmentation(manifest: DatasetManifest, threshold_pct: float) -> DatasetManifest:
    """Drop records with fragmentation above the threshold, or with no
    fragmentation rate on file (only videos with known rates are usable)."""
    if not (0.0 <= threshold_pct <= 100.0):
        raise ValueError(f"threshold_pct must be in [0, 100], got {threshold_pct}")
    kept = [
        r
        for r in manifest.records
        if r.fragmentation_pct is not None and r.fragmentation_pct <= threshold_pct
    ]
    return manifest.with_records(kept)


def split_sequences(
    manifest: DatasetManifest,
    train_per_stage: int,
    test_per_stage: int,
    seed: int,
) -> DatasetManifest:
    """Assign whole sequences to train or test until per-stage quotas are met.

    A sequence never contributes to both sides; records of an assigned
    sequence whose stage quota is already full stay unassigned, as do all
    records of sequences left over once quotas are met. Deterministic for a
    fixed seed.
    """
    if train_per_stage < 0 or test_per_stage < 0:
        raise ValueError("per-stage quotas must be nonnegative")

    by_sequence: dict[str, list[ImageRecord]] = {}
    seen_pairs: set[tuple[str, Stage]] = set()
    for rec in manifest.records:
        key = (rec.sequence_id, rec.stage)
        if key in seen_pairs:
            raise SplitError(
                f"sequence {rec.sequence_id!r} has multiple frames for stage "
                f"{rec.stage.value}; one representative frame per (sequence, stage) required"
            )
        seen_pairs.add(key)
        by_sequence.setdefault(rec.sequence_id, []).append(rec)

    order = sorted(by_sequence)
    random.Random(seed).shuffle(order)

    assignment: dict[str, Split] = {}
    chosen: dict[tuple[str, Stage], Split] = {}

    for split, quota in ((Split.TEST, test_per_stage), (Split.TRAIN, train_per_stage)):
        remaining = {stage: quota for stage in STAGES}
        for seq_id in order:
            if all(v == 0 for v in remaining.values()):
                break
            if seq_id in assignment:
                continue
            useful = [r for r in by_sequence[seq_id] if remaining[r.stage] > 0]
            if not useful:
                continue
            assignment[seq_id] = split
            for rec in useful:
                chosen[(rec.sequence_id, rec.stage)] = split
                remaining[rec.stage] -= 1
        unmet = [stage.value for stage, left in remaining.items() if left > 0]
        if unmet:
            raise SplitError(
                f"not enough eligible sequences to fill the {split.value} quota "
                f"for stage(s): {', '.join(unmet)}"
            )

    new_records = [
        replace(rec, split=chosen.get((rec.sequence_id, rec.stage), Split.UNASSIGNED))
        for rec in manifest.records
    ]
    return manifest.with_records(new_records)


EXTERNAL_LABEL_FILE = "labels.csv"
_QUALITY_LABELS = {"good", "fair", "poor"}


def load_external_blastocyst(directory: str | Path) -> DatasetManifest:
    """Load the external blastocyst set: PNGs plus a ``labels.csv`` with
    ``filename,quality`` rows (quality one of good/fair/poor)."""
    directory = Path(directory)
    label_path = directory / EXTERNAL_LABEL_FILE
    if not label_path.is_file():
        raise ExternalDatasetError(f"missing label file: {label_path}")

    records = []
    with label_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"filename", "quality"} <= set(reader.fieldnames):
            raise ExternalDatasetError(
                f"{label_path} must have a header with 'filename' and 'quality' columns"
            )
        for row in reader:
            filename = row["filename"].strip()
            quality = row["quality"].strip().lower().replace("-quality", "")
            if quality not in _QUALITY_LABELS:
                raise ExternalDatasetError(
                    f"{label_path}: unknown quality {row['quality']!r} for {filename!r}"
                )
            image_path = directory / filename
            if not image_path.is_file():
                raise ExternalDatasetError(f"labeled image missing on disk: {image_path}")
            stem = Path(filename).stem
            records.append(
                ImageRecord(
                    image_id=stem,
                    sequence_id=stem,
                    stage=Stage.BLASTOCYST,
                    source=Source.EXTERNAL,
                    path=filename,
                    metadata={"quality": quality},
                )
            )
    if not records:
        raise ExternalDatasetError(f"label file {label_path} lists no images")
    return DatasetManifest.from_records(records, provenance=f"external blastocyst set: {directory}")
