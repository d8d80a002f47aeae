import numpy as np
import pytest

from embryogen.datasets import (
    AnnotationError,
    ExternalDatasetError,
    SplitError,
    build_manifest,
    filter_fragmentation,
    load_external_blastocyst,
    split_sequences,
)
from embryogen.imaging import save_png
from embryogen.records import (
    DatasetManifest,
    ImageRecord,
    Source,
    Split,
    Stage,
    STAGES,
)


def record(i, stage=Stage.TWO_CELL, seq=None, frag=None, split=Split.UNASSIGNED):
    return ImageRecord(
        image_id=f"img{i}",
        sequence_id=seq or f"seq{i}",
        stage=stage,
        source=Source.TOY,
        path=f"{stage.value}/img{i}.png",
        fragmentation_pct=frag,
        split=split,
    )


# ---------------------------------------------------------------------------
# build_manifest
# ---------------------------------------------------------------------------

class TestBuildManifest:
    def test_frame_labeled_by_interval_membership(self):
        annotations = {"s1": [(Stage.TWO_CELL, 26.0), (Stage.FOUR_CELL, 38.0)]}
        frames = [("s1", 30.0, "two_cell/s1_f0.png")]
        manifest = build_manifest(frames, annotations)
        assert len(manifest.records) == 1
        assert manifest.records[0].stage is Stage.TWO_CELL
        assert manifest.records[0].hours_post_fertilization == 30.0

    def test_boundary_frame_belongs_to_new_stage(self):
        annotations = {"s1": [(Stage.TWO_CELL, 26.0), (Stage.FOUR_CELL, 38.0)]}
        manifest = build_manifest([("s1", 38.0, "four_cell/s1_f1.png")], annotations)
        assert manifest.records[0].stage is Stage.FOUR_CELL

    def test_empty_frames_give_empty_manifest_with_zero_counts(self):
        manifest = build_manifest([], {"s1": [(Stage.TWO_CELL, 26.0)]})
        assert manifest.records == []
        assert all(manifest.stage_counts[s] == 0 for s in STAGES)

    def test_frames_before_first_onset_or_unannotated_are_omitted(self):
        annotations = {"s1": [(Stage.TWO_CELL, 26.0)]}
        frames = [
            ("s1", 10.0, "x/early.png"),
            ("s2", 30.0, "x/unannotated.png"),
            ("s1", 27.0, "two_cell/kept.png"),
        ]
        manifest = build_manifest(frames, annotations)
        assert [r.image_id for r in manifest.records] == ["kept"]

    def test_unsorted_onsets_rejected_naming_sequence(self):
        annotations = {"bad-seq": [(Stage.FOUR_CELL, 38.0), (Stage.TWO_CELL, 26.0)]}
        with pytest.raises(AnnotationError, match="bad-seq"):
            build_manifest([], annotations)

    def test_duplicate_onsets_rejected(self):
        annotations = {"dup-seq": [(Stage.TWO_CELL, 26.0), (Stage.FOUR_CELL, 26.0)]}
        with pytest.raises(AnnotationError, match="dup-seq"):
            build_manifest([], annotations)


# ---------------------------------------------------------------------------
# filter_fragmentation
# ---------------------------------------------------------------------------

class TestFilterFragmentation:
    def test_strictly_above_threshold_excluded(self):
        manifest = DatasetManifest.from_records([record(0, frag=16.0)])
        assert filter_fragmentation(manifest, 15.0).records == []

    def test_exactly_at_threshold_retained(self):
        manifest = DatasetManifest.from_records([record(0, frag=15.0)])
        assert len(filter_fragmentation(manifest, 15.0).records) == 1

    def test_missing_fragmentation_excluded(self):
        manifest = DatasetManifest.from_records([record(0, frag=None)])
        assert filter_fragmentation(manifest, 15.0).records == []

    def test_zero_fragmentation_retained(self):
        manifest = DatasetManifest.from_records([record(0, frag=0.0)])
        assert len(filter_fragmentation(manifest, 15.0).records) == 1

    def test_counts_recomputed(self):
        manifest = DatasetManifest.from_records(
            [record(0, frag=5.0), record(1, frag=20.0)]
        )
        filtered = filter_fragmentation(manifest, 15.0)
        assert filtered.stage_counts[Stage.TWO_CELL] == 1

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        records = [
            record(i, stage=STAGES[i % 5], frag=float(rng.uniform(0, 40)))
            for i in range(60)
        ]
        manifest = DatasetManifest.from_records(records)
        once = filter_fragmentation(manifest, 15.0)
        twice = filter_fragmentation(once, 15.0)
        assert once == twice

    def test_threshold_out_of_range_rejected(self):
        manifest = DatasetManifest.from_records([record(0, frag=1.0)])
        with pytest.raises(ValueError):
            filter_fragmentation(manifest, 101.0)


# ---------------------------------------------------------------------------
# split_sequences
# ---------------------------------------------------------------------------

def multi_stage_corpus(n_sequences):
    """Each sequence contributes one frame per stage, like a real video."""
    records = []
    for i in range(n_sequences):
        for stage in STAGES:
            records.append(
                ImageRecord(
                    image_id=f"seq{i}_{stage.value}",
                    sequence_id=f"seq{i}",
                    stage=stage,
                    source=Source.TOY,
                    path=f"{stage.value}/seq{i}.png",
                )
            )
    return DatasetManifest.from_records(records)


class TestSplitSequences:
    def test_exact_quotas_per_stage(self):
        manifest = multi_stage_corpus(20)
        split = split_sequences(manifest, train_per_stage=12, test_per_stage=4, seed=0)
        for stage in STAGES:
            assert len(split.records_for(stage=stage, split=Split.TRAIN)) == 12
            assert len(split.records_for(stage=stage, split=Split.TEST)) == 4

    def test_no_sequence_in_both_splits(self):
        manifest = multi_stage_corpus(15)
        split = split_sequences(manifest, 8, 3, seed=11)
        train = {r.sequence_id for r in split.records_for(split=Split.TRAIN)}
        test = {r.sequence_id for r in split.records_for(split=Split.TEST)}
        assert train & test == set()

    def test_deterministic_for_fixed_seed(self):
        manifest = multi_stage_corpus(20)
        a = split_sequences(manifest, 10, 5, seed=42)
        b = split_sequences(manifest, 10, 5, seed=42)
        assert a == b

    def test_different_seeds_differ(self):
        manifest = multi_stage_corpus(30)
        a = split_sequences(manifest, 10, 5, seed=1)
        b = split_sequences(manifest, 10, 5, seed=2)
        assert a != b

    def test_leakage_free_over_100_seeds(self):
        manifest = multi_stage_corpus(25)
        for seed in range(100):
            split = split_sequences(manifest, 12, 6, seed=seed)
            train = {r.sequence_id for r in split.records_for(split=Split.TRAIN)}
            test = {r.sequence_id for r in split.records_for(split=Split.TEST)}
            assert train & test == set()

    def test_insufficient_records_error_names_stage(self):
        # every stage has ten sequences except morula, which has three
        records = []
        n = 0
        for stage in STAGES:
            count = 3 if stage is Stage.MORULA else 10
            for _ in range(count):
                records.append(record(n, stage=stage, seq=f"s{n}"))
                n += 1
        manifest = DatasetManifest.from_records(records)
        with pytest.raises(SplitError, match="morula"):
            split_sequences(manifest, train_per_stage=8, test_per_stage=2, seed=0)

    def test_multiple_frames_per_sequence_stage_rejected(self):
        records = [
            record(0, seq="shared"),
            record(1, seq="shared"),
        ]
        manifest = DatasetManifest.from_records(records)
        with pytest.raises(SplitError, match="representative"):
            split_sequences(manifest, 1, 0, seed=0)

    def test_single_stage_sequences_also_split_cleanly(self):
        records = [
            record(i, stage=STAGES[i % 5], seq=f"solo{i}") for i in range(50)
        ]
        manifest = DatasetManifest.from_records(records)
        split = split_sequences(manifest, train_per_stage=6, test_per_stage=2, seed=9)
        for stage in STAGES:
            assert len(split.records_for(stage=stage, split=Split.TRAIN)) == 6
            assert len(split.records_for(stage=stage, split=Split.TEST)) == 2


# ---------------------------------------------------------------------------
# load_external_blastocyst
# ---------------------------------------------------------------------------

def write_external_set(directory, n, qualities=("good", "fair", "poor")):
    rng = np.random.default_rng(0)
    lines = ["filename,quality"]
    for i in range(n):
        name = f"blast_{i:03d}.png"
        save_png(rng.uniform(0, 1, size=(64, 64)), directory / name)
        lines.append(f"{name},{qualities[i % len(qualities)]}")
    (directory / "labels.csv").write_text("\n".join(lines) + "\n")


class TestLoadExternal:
    def test_published_subset_size(self, tmp_path):
        write_external_set(tmp_path, 98)
        manifest = load_external_blastocyst(tmp_path)
        assert len(manifest.records) == 98
        assert all(r.stage is Stage.BLASTOCYST for r in manifest.records)
        assert all(r.source is Source.EXTERNAL for r in manifest.records)
        assert all(r.split is Split.UNASSIGNED for r in manifest.records)

    def test_quality_labels_preserved(self, tmp_path):
        write_external_set(tmp_path, 6)
        manifest = load_external_blastocyst(tmp_path)
        assert {r.metadata["quality"] for r in manifest.records} == {
            "good",
            "fair",
            "poor",
        }

    def test_record_count_matches_label_lines_and_directory(self, tmp_path):
        write_external_set(tmp_path, 17)
        manifest = load_external_blastocyst(tmp_path)
        label_lines = (tmp_path / "labels.csv").read_text().strip().splitlines()
        assert len(manifest.records) == len(label_lines) - 1
        # independent recount through a directory walk
        pngs = sorted(p.name for p in tmp_path.glob("*.png"))
        assert sorted(r.path for r in manifest.records) == pngs

    def test_empty_directory_is_error(self, tmp_path):
        with pytest.raises(ExternalDatasetError, match="label file"):
            load_external_blastocyst(tmp_path)

    def test_missing_image_is_error(self, tmp_path):
        (tmp_path / "labels.csv").write_text("filename,quality\nnope.png,good\n")
        with pytest.raises(ExternalDatasetError, match="nope.png"):
            load_external_blastocyst(tmp_path)

    def test_quality_suffix_form_accepted(self, tmp_path):
        save_png(np.zeros((64, 64)), tmp_path / "a.png")
        (tmp_path / "labels.csv").write_text("filename,quality\na.png,Good-Quality\n")
        manifest = load_external_blastocyst(tmp_path)
        assert manifest.records[0].metadata["quality"] == "good"
