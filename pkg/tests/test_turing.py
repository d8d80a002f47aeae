"""Turing-test backend: pools, sessions, verdicts, aggregation, HTTP API."""

import json
import random
import sqlite3

import numpy as np
import pytest
from fastapi.testclient import TestClient

from embryogen.imaging import save_png
from embryogen.records import STAGES, DatasetManifest, ImageRecord, Source, Stage
from embryogen.service import create_app
from embryogen.turing import (
    EvalPool,
    PoolError,
    PoolItem,
    PoolQuota,
    RegionAnnotation,
    TuringError,
    TuringStore,
    UnknownIdError,
    Verdict,
    VerdictConflict,
    aggregate_results,
    create_pool,
    create_session,
    export_annotations,
    next_image,
    report_for_pool,
    submit_verdict,
)

RES = 64


def noise_manifest(root, per_stage, seed=0):
    """Writes per-stage noise PNGs under root/real and returns a manifest
    with paths relative to root."""
    rng = np.random.default_rng(seed)
    records = []
    for stage in STAGES:
        for k in range(per_stage):
            rel = f"real/{stage.value}_{k}.png"
            save_png(rng.random((RES, RES)), root / rel)
            records.append(
                ImageRecord(
                    image_id=f"src-{stage.value}-{k}",
                    sequence_id=f"seq-{stage.value}-{k}",
                    stage=stage,
                    source=Source.TOY,
                    path=rel,
                )
            )
    return DatasetManifest.from_records(records, provenance="noise fixture")


def synth_arrays(per_stage, seed=1):
    rng = np.random.default_rng(seed)
    return {stage: rng.random((per_stage, RES, RES)).astype(np.float32) for stage in STAGES}


def small_pool(tmp_path, quota=None, pool_id="p1", seed=0):
    """Store plus a 20-item pool (2 real + 1 gan + 1 ldm per stage)."""
    if quota is None:
        quota = PoolQuota.uniform(real=2, gan=1, ldm=1)
    manifest = noise_manifest(tmp_path, per_stage=4)
    store = TuringStore(tmp_path / "store.sqlite")
    pool = create_pool(
        manifest,
        synth_arrays(3, seed=1),
        synth_arrays(3, seed=2),
        quota,
        store=store,
        out_dir=tmp_path / "pools",
        pool_id=pool_id,
        seed=seed,
        image_root=tmp_path,
    )
    return store, pool


def answer_all(store, session_id, judgment="real"):
    """Submit one verdict per remaining image; returns presented ids."""
    seen = []
    while True:
        payload = next_image(store, session_id)
        if payload.get("done"):
            return seen
        seen.append(payload["image_id"])
        submit_verdict(
            store,
            Verdict(session_id=session_id, image_id=payload["image_id"], judgment=judgment),
        )


class TestRegionAnnotation:
    def test_inside_bounds_ok(self):
        RegionAnnotation(x=5, y=5, w=25, h=15).validate(64, 64)
        RegionAnnotation(x=0, y=0, w=64, h=64).validate(64, 64)  # exact fit

    def test_negative_origin_rejected(self):
        with pytest.raises(TuringError, match="-1"):
            RegionAnnotation(x=-1, y=0, w=5, h=5).validate(64, 64)

    def test_zero_size_rejected(self):
        with pytest.raises(TuringError, match="positive size"):
            RegionAnnotation(x=0, y=0, w=0, h=5).validate(64, 64)

    def test_overflow_rejected(self):
        with pytest.raises(TuringError, match="exceeds"):
            RegionAnnotation(x=60, y=0, w=5, h=5).validate(64, 64)

    def test_json_round_trip_preserves_note(self):
        region = RegionAnnotation(x=3, y=4, w=10, h=8, note="blurry edge")
        assert RegionAnnotation.from_json(region.to_json()) == region


class TestPoolQuota:
    def test_paper_configuration(self):
        quota = PoolQuota.paper()
        assert quota.total == 1000
        assert quota.per_source("real") == 500
        assert quota.per_source("gan") == 250
        assert quota.per_source("ldm") == 250
        for stage in STAGES:
            assert quota.counts[("real", stage)] == 100
            assert quota.counts[("gan", stage)] == 50
            assert quota.counts[("ldm", stage)] == 50

    def test_unknown_source_rejected(self):
        with pytest.raises(PoolError, match="vae"):
            PoolQuota({("vae", Stage.MORULA): 1})

    def test_negative_count_rejected(self):
        with pytest.raises(PoolError, match="negative"):
            PoolQuota({("real", Stage.MORULA): -1})


class TestCreatePool:
    def test_paper_quota_yields_1000_items(self, tmp_path):
        manifest = noise_manifest(tmp_path, per_stage=100)
        store = TuringStore(tmp_path / "store.sqlite")
        pool = create_pool(
            manifest,
            synth_arrays(50, seed=1),
            synth_arrays(50, seed=2),
            PoolQuota.paper(),
            store=store,
            out_dir=tmp_path / "pools",
            seed=0,
            image_root=tmp_path,
        )
        assert len(pool.items) == 1000
        counts = {}
        for item in pool.items:
            key = (item.true_source, item.stage)
            counts[key] = counts.get(key, 0) + 1
        for stage in STAGES:
            assert counts[("real", stage)] == 100
            assert counts[("gan", stage)] == 50
            assert counts[("ldm", stage)] == 50

    def test_ids_are_opaque_and_files_exist(self, tmp_path):
        _, pool = small_pool(tmp_path)
        hex_chars = set("0123456789abcdef")
        for item in pool.items:
            assert item.image_id.startswith("img-")
            assert set(item.image_id[4:]) <= hex_chars  # nothing readable leaks
            assert pool.image_path(item.image_id).is_file()
        assert len({i.image_id for i in pool.items}) == len(pool.items)
        assert pool.resolution == RES

    def test_single_cell_quota(self, tmp_path):
        quota = PoolQuota({("real", Stage.BLASTOCYST): 1})
        _, pool = small_pool(tmp_path, quota=quota)
        assert len(pool.items) == 1
        assert pool.items[0].true_source == "real"
        assert pool.items[0].stage is Stage.BLASTOCYST

    def test_gan_short_for_morula_names_source_and_stage(self, tmp_path):
        manifest = noise_manifest(tmp_path, per_stage=4)
        store = TuringStore(tmp_path / "store.sqlite")
        gan = synth_arrays(3, seed=1)
        gan[Stage.MORULA] = gan[Stage.MORULA][:0]  # nothing left for morula
        with pytest.raises(PoolError, match=r"\(gan, morula\)"):
            create_pool(
                manifest,
                gan,
                synth_arrays(3, seed=2),
                PoolQuota.uniform(real=2, gan=1, ldm=1),
                store=store,
                out_dir=tmp_path / "pools",
                image_root=tmp_path,
            )

    def test_real_shortage_names_source_and_stage(self, tmp_path):
        manifest = noise_manifest(tmp_path, per_stage=1)
        store = TuringStore(tmp_path / "store.sqlite")
        with pytest.raises(PoolError, match=r"\(real, two_cell\)"):
            create_pool(
                manifest,
                synth_arrays(3),
                synth_arrays(3),
                PoolQuota.uniform(real=2, gan=1, ldm=1),
                store=store,
                out_dir=tmp_path / "pools",
                image_root=tmp_path,
            )

    def test_mixed_resolution_rejected(self, tmp_path):
        manifest = noise_manifest(tmp_path, per_stage=2)
        store = TuringStore(tmp_path / "store.sqlite")
        ldm = {stage: np.random.default_rng(3).random((2, 32, 32)) for stage in STAGES}
        with pytest.raises(PoolError, match="resolution"):
            create_pool(
                manifest,
                synth_arrays(2),
                ldm,
                PoolQuota.uniform(real=1, gan=1, ldm=1),
                store=store,
                out_dir=tmp_path / "pools",
                image_root=tmp_path,
            )

    def test_sampling_is_seeded(self, tmp_path):
        def content_hashes(subdir, seed):
            root = tmp_path / subdir
            manifest = noise_manifest(root, per_stage=6, seed=42)
            store = TuringStore(root / "store.sqlite")
            pool = create_pool(
                manifest,
                synth_arrays(6, seed=1),
                synth_arrays(6, seed=2),
                PoolQuota.uniform(real=2, gan=2, ldm=2),
                store=store,
                out_dir=root / "pools",
                pool_id="px",
                seed=seed,
                image_root=root,
            )
            return sorted(pool.image_path(i.image_id).read_bytes() for i in pool.items)

        assert content_hashes("a", seed=5) == content_hashes("b", seed=5)
        assert content_hashes("c", seed=5) != content_hashes("d", seed=6)

    def test_composition_revalidated_on_load(self, tmp_path):
        store, pool = small_pool(tmp_path)
        with sqlite3.connect(store.path) as con:
            con.execute(
                "DELETE FROM pool_items WHERE pool_id = ? AND image_id = ?",
                (pool.pool_id, pool.items[0].image_id),
            )
        with pytest.raises(PoolError, match="composition"):
            store.load_pool(pool.pool_id)


class TestSessions:
    def test_present_each_item_once_then_done(self, tmp_path):
        quota = PoolQuota(
            {
                ("real", Stage.BLASTOCYST): 1,
                ("gan", Stage.BLASTOCYST): 1,
                ("ldm", Stage.BLASTOCYST): 1,
            }
        )
        store, pool = small_pool(tmp_path, quota=quota)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        seen = answer_all(store, session.session_id)
        assert len(seen) == 3
        assert set(seen) == {item.image_id for item in pool.items}
        assert next_image(store, session.session_id) == {
            "done": True,
            "total": 3,
            "pool_id": pool.pool_id,
        }
        # done marker is idempotent
        assert next_image(store, session.session_id)["done"] is True
        assert store.load_session(session.session_id).status == "complete"

    def test_next_is_idempotent_before_verdict(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        first = next_image(store, session.session_id)
        assert next_image(store, session.session_id) == first

    def test_different_seeds_give_different_orders(self, tmp_path):
        store, pool = small_pool(tmp_path)
        s0 = create_session(store, pool.pool_id, "rater-a", seed=0)
        s1 = create_session(store, pool.pool_id, "rater-b", seed=1)
        assert s0.order != s1.order
        assert sorted(s0.order) == sorted(s1.order)  # both permute the full pool
        assert set(s0.order) == {item.image_id for item in pool.items}

    def test_unknown_session_and_pool(self, tmp_path):
        store, _ = small_pool(tmp_path)
        with pytest.raises(UnknownIdError, match="session"):
            next_image(store, "sess-missing")
        with pytest.raises(UnknownIdError, match="pool"):
            create_session(store, "pool-missing", "rater-a")

    def test_resumable_across_store_reopen(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=3)
        for _ in range(2):
            payload = next_image(store, session.session_id)
            submit_verdict(
                store,
                Verdict(
                    session_id=session.session_id,
                    image_id=payload["image_id"],
                    judgment="fake",
                ),
            )
        reopened = TuringStore(store.path)
        resumed = reopened.load_session(session.session_id)
        assert resumed.cursor == 2
        assert next_image(reopened, session.session_id)["image_id"] == session.order[2]


class TestVerdicts:
    def test_round_trip_is_exact(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        image_id = next_image(store, session.session_id)["image_id"]
        verdict = Verdict(
            session_id=session.session_id,
            image_id=image_id,
            judgment="fake",
            regions=(
                RegionAnnotation(x=3, y=4, w=10, h=8, note="halo looks painted"),
                RegionAnnotation(x=20, y=20, w=5, h=5),
            ),
            comment="texture too smooth, looks painted",
            timestamp="2026-02-03T04:05:06+00:00",
        )
        submit_verdict(store, verdict)
        stored = store.verdicts_for_session(session.session_id)
        assert stored == [verdict]

    def test_duplicate_verdict_conflicts(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        image_id = next_image(store, session.session_id)["image_id"]
        verdict = Verdict(session_id=session.session_id, image_id=image_id, judgment="real")
        submit_verdict(store, verdict)
        with pytest.raises(VerdictConflict):
            submit_verdict(store, verdict)
        # conflict neither advanced the cursor nor duplicated the row
        assert store.load_session(session.session_id).cursor == 1
        assert len(store.verdicts_for_session(session.session_id)) == 1

    def test_out_of_bounds_region_rejected_and_not_stored(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        image_id = next_image(store, session.session_id)["image_id"]
        with pytest.raises(TuringError, match="-1"):
            submit_verdict(
                store,
                Verdict(
                    session_id=session.session_id,
                    image_id=image_id,
                    judgment="fake",
                    regions=(RegionAnnotation(x=-1, y=0, w=5, h=5),),
                ),
            )
        assert store.verdicts_for_session(session.session_id) == []
        assert store.load_session(session.session_id).cursor == 0

    def test_unpresented_image_rejected(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        later = session.order[3]
        with pytest.raises(TuringError, match="not been presented"):
            submit_verdict(
                store, Verdict(session_id=session.session_id, image_id=later, judgment="real")
            )

    def test_bad_judgment_rejected(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        image_id = next_image(store, session.session_id)["image_id"]
        with pytest.raises(TuringError, match="judgment"):
            submit_verdict(
                store,
                Verdict(session_id=session.session_id, image_id=image_id, judgment="maybe"),
            )

    def test_unknown_image_rejected(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        with pytest.raises(UnknownIdError, match="img-nope"):
            submit_verdict(
                store,
                Verdict(session_id=session.session_id, image_id="img-nope", judgment="real"),
            )

    def test_cursor_persisted_after_every_verdict(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session = create_session(store, pool.pool_id, "rater-a", seed=0)
        for expected in range(1, 6):
            payload = next_image(store, session.session_id)
            submit_verdict(
                store,
                Verdict(
                    session_id=session.session_id,
                    image_id=payload["image_id"],
                    judgment="real",
                ),
            )
            assert store.load_session(session.session_id).cursor == expected


def mem_pool(counts):
    """In-memory pool for aggregation tests; no files involved."""
    items = []
    for (src, stage), n in counts.items():
        for k in range(n):
            items.append(PoolItem(f"im-{src}-{stage.value}-{k}", src, stage))
    return EvalPool(
        pool_id="mem",
        items=tuple(items),
        quota=PoolQuota(counts),
        seed=0,
        resolution=RES,
    )


def verdicts_for(pool, source, n_correct, n_total, session_id="s1"):
    """First n_correct verdicts right, the rest wrong, over that source's
    items in order."""
    items = [it for it in pool.items if it.true_source == source][:n_total]
    assert len(items) == n_total
    right = "real" if source == "real" else "fake"
    wrong = "fake" if source == "real" else "real"
    return [
        Verdict(
            session_id=session_id,
            image_id=item.image_id,
            judgment=right if k < n_correct else wrong,
        )
        for k, item in enumerate(items)
    ]


class TestAggregation:
    def test_three_of_four_real_is_75_percent(self):
        pool = mem_pool({("real", Stage.MORULA): 4})
        report = aggregate_results(verdicts_for(pool, "real", 3, 4), pool)
        assert report.real_accuracy == 0.75
        assert report.n_verdicts == 4

    def test_figure6_synthetic_split(self):
        # 74.7% gan and 34.4% ldm detection over equal subsets pools to 54.55%
        pool = mem_pool({("gan", Stage.MORULA): 1000, ("ldm", Stage.MORULA): 1000})
        verdicts = verdicts_for(pool, "gan", 747, 1000) + verdicts_for(pool, "ldm", 344, 1000)
        report = aggregate_results(verdicts, pool)
        assert report.per_source["gan"].accuracy == pytest.approx(0.747, abs=1e-12)
        assert report.per_source["ldm"].accuracy == pytest.approx(0.344, abs=1e-12)
        assert report.synthetic_accuracy == pytest.approx(0.5455, abs=1e-12)

    def test_per_stage_table_entry(self):
        pool = mem_pool({("real", Stage.EIGHT_CELL): 100})
        report = aggregate_results(verdicts_for(pool, "real", 89, 100), pool)
        assert report.per_stage["eight_cell"]["real"].accuracy == pytest.approx(0.89)
        assert report.per_stage["morula"]["real"].total == 0

    def test_unweighted_vs_weighted_rater_means(self):
        # rater A: 1/1 correct; rater B: 0/3. Unweighted mean 0.5, weighted 0.25.
        pool = mem_pool({("real", Stage.MORULA): 4})
        verdicts = verdicts_for(pool, "real", 1, 1, session_id="sA")
        items = [it for it in pool.items if it.true_source == "real"][1:]
        verdicts += [
            Verdict(session_id="sB", image_id=item.image_id, judgment="fake")
            for item in items
        ]
        report = aggregate_results(verdicts, pool, {"sA": "A", "sB": "B"})
        assert report.rater_mean["real"] == 0.5
        assert report.rater_weighted_mean["real"] == 0.25
        assert report.real_accuracy == 0.25

    def test_union_equals_weighted_mean_of_raters(self):
        counts = {}
        for stage in STAGES:
            counts[("real", stage)] = 4
            counts[("gan", stage)] = 4
            counts[("ldm", stage)] = 4
        pool = mem_pool(counts)
        rng = random.Random(3)
        verdicts = []
        for sid in ("sA", "sB", "sC"):
            for item in pool.items:
                if rng.random() < 0.7:
                    verdicts.append(
                        Verdict(
                            session_id=sid,
                            image_id=item.image_id,
                            judgment=rng.choice(["real", "fake"]),
                        )
                    )
        report = aggregate_results(verdicts, pool, {"sA": "A", "sB": "B", "sC": "C"})
        for key in ("real", "gan", "ldm", "synthetic"):
            pooled = report.per_source[key].accuracy
            weight = sum(r[key].total for r in report.per_rater.values())
            blended = (
                sum(r[key].accuracy * r[key].total for r in report.per_rater.values() if r[key].total)
                / weight
            )
            assert pooled == pytest.approx(blended, abs=1e-12)
            assert report.rater_weighted_mean[key] == pytest.approx(pooled, abs=1e-12)

    def test_judged_counts_sum_to_totals(self):
        pool = mem_pool({("gan", Stage.MORULA): 6, ("real", Stage.MORULA): 6})
        verdicts = verdicts_for(pool, "gan", 2, 6) + verdicts_for(pool, "real", 5, 6)
        report = aggregate_results(verdicts, pool)
        for slice_ in report.pie:
            tally = report.per_source[slice_["source"]]
            assert slice_["judged_real"] + slice_["judged_fake"] == tally.total

    def test_unknown_image_in_verdicts(self):
        pool = mem_pool({("real", Stage.MORULA): 1})
        with pytest.raises(UnknownIdError, match="ghost"):
            aggregate_results(
                [Verdict(session_id="s1", image_id="ghost", judgment="real")], pool
            )

    def test_empty_verdicts_give_none_accuracies(self):
        pool = mem_pool({("real", Stage.MORULA): 2})
        report = aggregate_results([], pool)
        assert report.n_verdicts == 0
        assert report.real_accuracy is None
        assert report.synthetic_accuracy is None
        assert report.to_json()["real_accuracy"] is None


class TestExportAnnotations:
    def _populated_store(self, tmp_path):
        store, pool = small_pool(tmp_path)
        session_a = create_session(store, pool.pool_id, "rater-a", seed=0)
        session_b = create_session(store, pool.pool_id, "rater-b", seed=1)
        rng = random.Random(5)
        for session in (session_a, session_b):
            while True:
                payload = next_image(store, session.session_id)
                if payload.get("done"):
                    break
                n_regions = rng.choice([0, 1, 2])
                regions = tuple(
                    RegionAnnotation(x=rng.randrange(0, 30), y=rng.randrange(0, 30), w=4, h=6)
                    for _ in range(n_regions)
                )
                submit_verdict(
                    store,
                    Verdict(
                        session_id=session.session_id,
                        image_id=payload["image_id"],
                        judgment=rng.choice(["real", "fake"]),
                        regions=regions,
                        comment="spotted something" if n_regions else None,
                    ),
                )
        return store, pool

    def test_row_count_matches_independent_recount(self, tmp_path):
        store, _ = self._populated_store(tmp_path)
        rows = export_annotations(store)
        with sqlite3.connect(store.path) as con:
            stored = sum(
                len(json.loads(r[0])) for r in con.execute("SELECT regions FROM verdicts")
            )
        assert stored > 0
        assert len(rows) == stored

    def test_source_filter(self, tmp_path):
        store, pool = self._populated_store(tmp_path)
        gan_rows = export_annotations(store, source="gan")
        assert gan_rows  # fixture guarantees some annotated gan images
        assert all(row.true_source == "gan" for row in gan_rows)
        by_hand = [row for row in export_annotations(store) if row.true_source == "gan"]
        assert gan_rows == by_hand

    def test_rater_filter(self, tmp_path):
        store, _ = self._populated_store(tmp_path)
        rows = export_annotations(store, rater_id="rater-b")
        assert rows
        assert all(row.rater_id == "rater-b" for row in rows)

    def test_empty_store_dumps_nothing(self, tmp_path):
        store = TuringStore(tmp_path / "fresh.sqlite")
        assert export_annotations(store) == []


LEAK_TOKENS = ["real", "gan", "ldm", "synthetic"] + [s.value for s in STAGES]


class TestApi:
    @pytest.fixture()
    def client(self, tmp_path):
        store, pool = small_pool(tmp_path)
        app = create_app(store.path)
        with TestClient(app) as client:
            yield client, store, pool

    def test_open_session(self, client):
        client, _, pool = client
        resp = client.post("/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id})
        assert resp.status_code == 201
        body = resp.json()
        assert body["total"] == len(pool.items)
        assert body["session_id"].startswith("sess-")

    def test_unknown_pool_404(self, client):
        client, _, _ = client
        resp = client.post("/sessions", json={"rater_id": "r1", "pool_id": "pool-missing"})
        assert resp.status_code == 404

    def test_full_session_loop_with_png_fetch(self, client):
        client, store, pool = client
        sid = client.post(
            "/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id, "seed": 0}
        ).json()["session_id"]
        served = []
        while True:
            payload = client.get(f"/sessions/{sid}/next").json()
            if payload.get("done"):
                break
            image = client.get(payload["url"])
            assert image.status_code == 200
            assert image.headers["content-type"] == "image/png"
            assert image.content[:8] == b"\x89PNG\r\n\x1a\n"
            served.append(payload["image_id"])
            resp = client.post(
                f"/sessions/{sid}/verdicts",
                json={
                    "image_id": payload["image_id"],
                    "judgment": "fake",
                    "regions": [{"x": 1, "y": 2, "w": 3, "h": 4, "note": "odd halo"}],
                    "comment": "hard to say",
                },
            )
            assert resp.status_code == 201
            assert resp.json()["cursor"] == len(served)
        assert len(served) == len(pool.items)
        assert payload == {"done": True, "total": len(pool.items), "pool_id": pool.pool_id}

    def test_duplicate_verdict_409(self, client):
        client, _, pool = client
        sid = client.post(
            "/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id, "seed": 0}
        ).json()["session_id"]
        image_id = client.get(f"/sessions/{sid}/next").json()["image_id"]
        body = {"image_id": image_id, "judgment": "real"}
        assert client.post(f"/sessions/{sid}/verdicts", json=body).status_code == 201
        assert client.post(f"/sessions/{sid}/verdicts", json=body).status_code == 409

    def test_out_of_bounds_region_400(self, client):
        client, _, pool = client
        sid = client.post(
            "/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id, "seed": 0}
        ).json()["session_id"]
        image_id = client.get(f"/sessions/{sid}/next").json()["image_id"]
        resp = client.post(
            f"/sessions/{sid}/verdicts",
            json={
                "image_id": image_id,
                "judgment": "fake",
                "regions": [{"x": -1, "y": 0, "w": 5, "h": 5}],
            },
        )
        assert resp.status_code == 400

    def test_unknown_session_404(self, client):
        client, _, _ = client
        assert client.get("/sessions/sess-nope/next").status_code == 404

    def test_turing_report_endpoint(self, client):
        client, store, pool = client
        sid = client.post(
            "/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id, "seed": 0}
        ).json()["session_id"]
        while True:
            payload = client.get(f"/sessions/{sid}/next").json()
            if payload.get("done"):
                break
            client.post(
                f"/sessions/{sid}/verdicts",
                json={"image_id": payload["image_id"], "judgment": "real"},
            )
        report = client.get("/reports/turing", params={"pool": pool.pool_id}).json()
        # judging everything real: perfect on real items, zero on synthetic
        assert report["real_accuracy"] == 1.0
        assert report["synthetic_accuracy"] == 0.0
        assert report["n_verdicts"] == len(pool.items)
        assert {s["source"] for s in report["pie"]} == {"real", "gan", "ldm"}
        assert client.get("/reports/turing", params={"pool": "nope"}).status_code == 404

    def test_annotations_endpoint(self, client):
        client, store, pool = client
        sid = client.post(
            "/sessions", json={"rater_id": "r1", "pool_id": pool.pool_id, "seed": 0}
        ).json()["session_id"]
        image_id = client.get(f"/sessions/{sid}/next").json()["image_id"]
        client.post(
            f"/sessions/{sid}/verdicts",
            json={
                "image_id": image_id,
                "judgment": "fake",
                "regions": [{"x": 5, "y": 6, "w": 7, "h": 8, "note": "edge artifact"}],
            },
        )
        body = client.get("/reports/annotations").json()
        assert body["count"] == 1
        row = body["annotations"][0]
        assert (row["x"], row["y"], row["w"], row["h"]) == (5, 6, 7, 8)
        assert row["rater_id"] == "r1"
        assert row["true_source"] in ("real", "gan", "ldm")

    def test_no_source_leak_before_verdict(self, client):
        """Every byte the client sees before its verdicts carries no
        source or stage vocabulary."""
        client, store, pool = client
        resp = client.post(
            "/sessions", json={"rater_id": "j9", "pool_id": pool.pool_id, "seed": 0}
        )
        transcripts = [resp.text]
        sid = resp.json()["session_id"]
        while True:
            resp = client.get(f"/sessions/{sid}/next")
            transcripts.append(resp.text)
            payload = resp.json()
            if payload.get("done"):
                break
            image = client.get(payload["url"])
            assert not any(t.encode() in image.content for t in LEAK_TOKENS)
            client.post(
                f"/sessions/{sid}/verdicts",
                json={"image_id": payload["image_id"], "judgment": "fake"},
            )
        for text in transcripts:
            for token in LEAK_TOKENS:
                assert token not in text, f"{token!r} leaked in {text[:120]}"
