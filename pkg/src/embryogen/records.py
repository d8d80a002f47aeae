"""Image records, dataset manifests, and their JSONL serialization.

A manifest is the unit every other part of the workbench consumes: a flat
list of labeled image records plus per-stage counts and a provenance note.
Manifests are immutable in spirit; all operations return new instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class Stage(str, Enum):
    """The five developmental stages, in temporal order."""

    TWO_CELL = "two_cell"
    FOUR_CELL = "four_cell"
    EIGHT_CELL = "eight_cell"
    MORULA = "morula"
    BLASTOCYST = "blastocyst"

    @property
    def ordinal(self) -> int:
        return STAGES.index(self)


STAGES: tuple[Stage, ...] = (
    Stage.TWO_CELL,
    Stage.FOUR_CELL,
    Stage.EIGHT_CELL,
    Stage.MORULA,
    Stage.BLASTOCYST,
)


class Source(str, Enum):
    VOLVAT = "volvat"
    TLV_PUBLIC = "tlv_public"
    EXTERNAL = "external"
    SYNTHETIC_GAN = "synthetic_gan"
    SYNTHETIC_LDM = "synthetic_ldm"
    TOY = "toy"


SYNTHETIC_SOURCES = frozenset({Source.SYNTHETIC_GAN, Source.SYNTHETIC_LDM})


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class ManifestError(ValueError):
    """Raised when a manifest or record violates its contract."""


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image.

    ``hours_post_fertilization`` is only meaningful for real frames;
    synthetic records must leave it unset. ``fragmentation_pct`` is the
    embryo-level fragmentation rate in [0, 100], missing when the source
    video had no rate on file.
    """

    image_id: str
    sequence_id: str
    stage: Stage
    source: Source
    path: str
    hours_post_fertilization: Optional[float] = None
    fragmentation_pct: Optional[float] = None
    split: Split = Split.UNASSIGNED
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.image_id:
            raise ManifestError("image_id must be non-empty")
        if self.source in SYNTHETIC_SOURCES and self.hours_post_fertilization is not None:
            raise ManifestError(
                f"synthetic record {self.image_id!r} must not carry "
                "hours_post_fertilization"
            )
        if self.hours_post_fertilization is not None and self.hours_post_fertilization < 0:
            raise ManifestError(f"record {self.image_id!r}: negative hours")
        if self.fragmentation_pct is not None and not (0.0 <= self.fragmentation_pct <= 100.0):
            raise ManifestError(
                f"record {self.image_id!r}: fragmentation_pct outside [0, 100]"
            )

    def to_json(self) -> dict:
        out = {
            "image_id": self.image_id,
            "sequence_id": self.sequence_id,
            "stage": self.stage.value,
            "source": self.source.value,
            "path": self.path,
            "split": self.split.value,
        }
        if self.hours_post_fertilization is not None:
            out["hours_post_fertilization"] = self.hours_post_fertilization
        if self.fragmentation_pct is not None:
            out["fragmentation_pct"] = self.fragmentation_pct
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRecord":
        return cls(
            image_id=obj["image_id"],
            sequence_id=obj["sequence_id"],
            stage=Stage(obj["stage"]),
            source=Source(obj["source"]),
            path=obj["path"],
            hours_post_fertilization=obj.get("hours_post_fertilization"),
            fragmentation_pct=obj.get("fragmentation_pct"),
            split=Split(obj.get("split", "unassigned")),
            metadata=obj.get("metadata", {}),
        )


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    stage_counts: dict[Stage, int]
    provenance: str = ""

    @classmethod
    def from_records(
        cls, records: Iterable[ImageRecord], provenance: str = ""
    ) -> "DatasetManifest":
        records = list(records)
        manifest = cls(records=records, stage_counts=count_stages(records), provenance=provenance)
        manifest.validate()
        return manifest

    def validate(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            rec.validate()
            if rec.image_id in seen:
                raise ManifestError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
        if self.stage_counts != count_stages(self.records):
            raise ManifestError("stage_counts inconsistent with records")
        train_seqs = {r.sequence_id for r in self.records if r.split is Split.TRAIN}
        test_seqs = {r.sequence_id for r in self.records if r.split is Split.TEST}
        leaked = train_seqs & test_seqs
        if leaked:
            raise ManifestError(f"sequences present in both splits: {sorted(leaked)[:5]}")

    def subset(self, predicate) -> "DatasetManifest":
        return DatasetManifest.from_records(
            [r for r in self.records if predicate(r)], provenance=self.provenance
        )

    def records_for(
        self,
        stage: Optional[Stage] = None,
        split: Optional[Split] = None,
        source: Optional[Source] = None,
    ) -> list[ImageRecord]:
        out = self.records
        if stage is not None:
            out = [r for r in out if r.stage is stage]
        if split is not None:
            out = [r for r in out if r.split is split]
        if source is not None:
            out = [r for r in out if r.source is source]
        return list(out)

    def counts_by_stage_and_source(self) -> dict[tuple[Stage, Source], int]:
        counts: dict[tuple[Stage, Source], int] = {}
        for rec in self.records:
            key = (rec.stage, rec.source)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def with_records(self, records: Iterable[ImageRecord]) -> "DatasetManifest":
        return DatasetManifest.from_records(records, provenance=self.provenance)

    # -- serialization: one header object, then one record per line --------

    def to_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        header = {
            "kind": "dataset_manifest",
            "provenance": self.provenance,
            "stage_counts": {s.value: self.stage_counts.get(s, 0) for s in STAGES},
        }
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise ManifestError(f"empty manifest file: {path}")
        header = json.loads(lines[0])
        if header.get("kind") != "dataset_manifest":
            raise ManifestError(f"not a manifest file: {path}")
        records = [ImageRecord.from_json(json.loads(line)) for line in lines[1:]]
        manifest = cls.from_records(records, provenance=header.get("provenance", ""))
        declared = {Stage(k): v for k, v in header.get("stage_counts", {}).items()}
        if declared != manifest.stage_counts:
            raise ManifestError(f"declared stage_counts disagree with records in {path}")
        return manifest


def count_stages(records: Iterable[ImageRecord]) -> dict[Stage, int]:
    counts = {stage: 0 for stage in STAGES}
    for rec in records:
        counts[rec.stage] += 1
    return counts


# Published per-source image distribution of the combined clinic + public
# time-lapse datasets (1,100 images per stage, 5,500 total). Used to verify
# ingested real datasets against the expected breakdown.
REFERENCE_STAGE_SOURCE_COUNTS: dict[tuple[Stage, Source], int] = {
    (Stage.TWO_CELL, Source.VOLVAT): 1100,
    (Stage.TWO_CELL, Source.TLV_PUBLIC): 0,
    (Stage.FOUR_CELL, Source.VOLVAT): 1100,
    (Stage.FOUR_CELL, Source.TLV_PUBLIC): 0,
    (Stage.EIGHT_CELL, Source.VOLVAT): 850,
    (Stage.EIGHT_CELL, Source.TLV_PUBLIC): 250,
    (Stage.MORULA, Source.VOLVAT): 660,
    (Stage.MORULA, Source.TLV_PUBLIC): 440,
    (Stage.BLASTOCYST, Source.VOLVAT): 600,
    (Stage.BLASTOCYST, Source.TLV_PUBLIC): 500,
}


def check_reference_distribution(manifest: DatasetManifest) -> list[str]:
    """Compare a manifest's (stage, source) counts against the published
    distribution; returns a list of human-readable mismatches (empty = ok)."""
    actual = manifest.counts_by_stage_and_source()
    problems = []
    for (stage, source), expected in REFERENCE_STAGE_SOURCE_COUNTS.items():
        got = actual.get((stage, source), 0)
        if got != expected:
            problems.append(f"{stage.value}/{source.value}: expected {expected}, got {got}")
    return problems
