"""Expert Turing-test backend: pools, sessions, verdicts, aggregation.

Raters judge one image at a time as real or fake, optionally marking
rectangular regions and leaving comments. True sources stay server-side;
nothing sent to a rater before their verdict identifies where an image
came from. Persistence is a single sqlite file whose verdict table is
append-only: the (session_id, image_id) primary key turns replays into
conflicts instead of silent overwrites.
"""

from __future__ import annotations

import hashlib
import json
import random
import secrets
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .imaging import load_png, save_png
from .records import STAGES, DatasetManifest, Stage

SOURCES = ("real", "gan", "ldm")
JUDGMENTS = ("real", "fake")


class TuringError(ValueError):
    """Contract violation in pool, session, or verdict handling."""


class UnknownIdError(TuringError):
    """A pool, session, or image id that the store has never seen."""


class VerdictConflict(TuringError):
    """A second verdict for the same (session, image) pair."""


class PoolError(TuringError):
    """Pool composition violates its declared quota."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class RegionAnnotation:
    """Axis-aligned rectangle in image pixel coordinates, optional note."""

    x: float
    y: float
    w: float
    h: float
    note: Optional[str] = None

    def validate(self, width: int, height: int) -> None:
        if self.w <= 0 or self.h <= 0:
            raise TuringError(f"region must have positive size, got w={self.w} h={self.h}")
        if self.x < 0 or self.y < 0:
            raise TuringError(f"region origin outside image: x={self.x} y={self.y}")
        if self.x + self.w > width or self.y + self.h > height:
            raise TuringError(
                f"region ({self.x}, {self.y}, {self.w}, {self.h}) exceeds "
                f"{width}x{height} image bounds"
            )

    def to_json(self) -> dict:
        out: dict = {"x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if self.note is not None:
            out["note"] = self.note
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RegionAnnotation":
        return cls(x=obj["x"], y=obj["y"], w=obj["w"], h=obj["h"], note=obj.get("note"))


@dataclass(frozen=True)
class Verdict:
    session_id: str
    image_id: str
    judgment: str
    regions: tuple[RegionAnnotation, ...] = ()
    comment: Optional[str] = None
    timestamp: str = ""


@dataclass(frozen=True)
class PoolItem:
    image_id: str
    true_source: str
    stage: Stage
    path: str = ""


@dataclass(frozen=True)
class PoolQuota:
    """Required item count per (source, stage) cell."""

    counts: Mapping[tuple[str, Stage], int]

    def __post_init__(self) -> None:
        normalized: dict[tuple[str, Stage], int] = {}
        for (source, stage), n in dict(self.counts).items():
            if source not in SOURCES:
                raise PoolError(f"unknown source {source!r}, expected one of {SOURCES}")
            if n < 0:
                raise PoolError(f"negative quota for ({source}, {Stage(stage).value})")
            normalized[(source, Stage(stage))] = int(n)
        object.__setattr__(self, "counts", normalized)

    @classmethod
    def uniform(cls, real: int, gan: int, ldm: int) -> "PoolQuota":
        counts: dict[tuple[str, Stage], int] = {}
        for stage in STAGES:
            counts[("real", stage)] = real
            counts[("gan", stage)] = gan
            counts[("ldm", stage)] = ldm
        return cls(counts)

    @classmethod
    def paper(cls) -> "PoolQuota":
        """1,000 items: per stage 100 real, 50 gan, 50 ldm."""
        return cls.uniform(real=100, gan=50, ldm=50)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def per_source(self, source: str) -> int:
        return sum(n for (src, _), n in self.counts.items() if src == source)

    def cells(self) -> list[tuple[str, Stage, int]]:
        """Cells in deterministic (source, stage) order."""
        out = []
        for source in SOURCES:
            for stage in STAGES:
                n = self.counts.get((source, stage), 0)
                if n:
                    out.append((source, stage, n))
        return out

    def to_json(self) -> list:
        return [[src, stage.value, n] for src, stage, n in self.cells()]

    @classmethod
    def from_json(cls, obj: list) -> "PoolQuota":
        return cls({(src, Stage(stage)): n for src, stage, n in obj})


@dataclass(frozen=True)
class EvalPool:
    pool_id: str
    items: tuple[PoolItem, ...]
    quota: PoolQuota
    seed: int
    resolution: int
    image_dir: str = ""

    def validate(self) -> None:
        actual: dict[tuple[str, Stage], int] = {}
        for item in self.items:
            key = (item.true_source, item.stage)
            actual[key] = actual.get(key, 0) + 1
        for key in sorted(
            set(actual) | set(self.quota.counts),
            key=lambda k: (SOURCES.index(k[0]), k[1].ordinal),
        ):
            want = self.quota.counts.get(key, 0)
            got = actual.get(key, 0)
            if want != got:
                raise PoolError(
                    f"pool {self.pool_id} composition violates quota for "
                    f"({key[0]}, {key[1].value}): expected {want}, found {got}"
                )
        if len({item.image_id for item in self.items}) != len(self.items):
            raise PoolError(f"pool {self.pool_id} has duplicate image ids")

    def item_by_id(self, image_id: str) -> PoolItem:
        for item in self.items:
            if item.image_id == image_id:
                return item
        raise UnknownIdError(f"image {image_id!r} is not in pool {self.pool_id!r}")

    def image_path(self, image_id: str) -> Path:
        return Path(self.image_dir) / self.item_by_id(image_id).path


@dataclass(frozen=True)
class EvalSession:
    session_id: str
    rater_id: str
    pool_id: str
    order: tuple[str, ...]
    cursor: int
    status: str  # active | complete

    @property
    def total(self) -> int:
        return len(self.order)


# ---------------------------------------------------------------------------
# persistence

_SCHEMA = """
CREATE TABLE IF NOT EXISTS pools (
    pool_id TEXT PRIMARY KEY,
    seed INTEGER NOT NULL,
    resolution INTEGER NOT NULL,
    quota TEXT NOT NULL,
    image_dir TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS pool_items (
    pool_id TEXT NOT NULL REFERENCES pools(pool_id),
    image_id TEXT NOT NULL,
    true_source TEXT NOT NULL,
    stage TEXT NOT NULL,
    path TEXT NOT NULL,
    PRIMARY KEY (pool_id, image_id)
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    rater_id TEXT NOT NULL,
    pool_id TEXT NOT NULL REFERENCES pools(pool_id),
    item_order TEXT NOT NULL,
    cursor INTEGER NOT NULL,
    status TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS verdicts (
    session_id TEXT NOT NULL REFERENCES sessions(session_id),
    image_id TEXT NOT NULL,
    judgment TEXT NOT NULL,
    regions TEXT NOT NULL,
    comment TEXT,
    created_at TEXT NOT NULL,
    PRIMARY KEY (session_id, image_id)
);
"""


class TuringStore:
    """Single-file sqlite store. Opens one short-lived connection per
    operation so separate processes (service, CLI reports) can share it."""

    def __init__(self, path: str | Path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.path = str(path)
        with self._connect() as con:
            con.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        con = sqlite3.connect(self.path)
        con.execute("PRAGMA foreign_keys = ON")
        return con

    # -- pools --------------------------------------------------------------

    def save_pool(self, pool: EvalPool) -> None:
        pool.validate()
        with self._connect() as con:
            con.execute(
                "INSERT INTO pools VALUES (?, ?, ?, ?, ?, ?)",
                (
                    pool.pool_id,
                    pool.seed,
                    pool.resolution,
                    json.dumps(pool.quota.to_json()),
                    pool.image_dir,
                    _now(),
                ),
            )
            con.executemany(
                "INSERT INTO pool_items VALUES (?, ?, ?, ?, ?)",
                [
                    (pool.pool_id, it.image_id, it.true_source, it.stage.value, it.path)
                    for it in pool.items
                ],
            )

    def load_pool(self, pool_id: str) -> EvalPool:
        with self._connect() as con:
            row = con.execute(
                "SELECT seed, resolution, quota, image_dir FROM pools WHERE pool_id = ?",
                (pool_id,),
            ).fetchone()
            if row is None:
                raise UnknownIdError(f"unknown pool {pool_id!r}")
            items = con.execute(
                "SELECT image_id, true_source, stage, path FROM pool_items "
                "WHERE pool_id = ? ORDER BY rowid",
                (pool_id,),
            ).fetchall()
        pool = EvalPool(
            pool_id=pool_id,
            items=tuple(
                PoolItem(image_id=i, true_source=s, stage=Stage(st), path=p)
                for i, s, st, p in items
            ),
            quota=PoolQuota.from_json(json.loads(row[2])),
            seed=row[0],
            resolution=row[1],
            image_dir=row[3],
        )
        pool.validate()  # composition re-checked on every load
        return pool

    def pool_ids(self) -> list[str]:
        with self._connect() as con:
            return [r[0] for r in con.execute("SELECT pool_id FROM pools ORDER BY rowid")]

    # -- sessions -----------------------------------------------------------

    def save_session(self, session: EvalSession) -> None:
        with self._connect() as con:
            con.execute(
                "INSERT INTO sessions VALUES (?, ?, ?, ?, ?, ?)",
                (
                    session.session_id,
                    session.rater_id,
                    session.pool_id,
                    json.dumps(list(session.order)),
                    session.cursor,
                    session.status,
                ),
            )

    def load_session(self, session_id: str) -> EvalSession:
        with self._connect() as con:
            row = con.execute(
                "SELECT rater_id, pool_id, item_order, cursor, status "
                "FROM sessions WHERE session_id = ?",
                (session_id,),
            ).fetchone()
        if row is None:
            raise UnknownIdError(f"unknown session {session_id!r}")
        return EvalSession(
            session_id=session_id,
            rater_id=row[0],
            pool_id=row[1],
            order=tuple(json.loads(row[2])),
            cursor=row[3],
            status=row[4],
        )

    def _update_session(self, con: sqlite3.Connection, session_id: str, cursor: int, status: str) -> None:
        con.execute(
            "UPDATE sessions SET cursor = ?, status = ? WHERE session_id = ?",
            (cursor, status, session_id),
        )

    def mark_complete(self, session_id: str) -> None:
        session = self.load_session(session_id)
        with self._connect() as con:
            self._update_session(con, session_id, session.cursor, "complete")

    def sessions_for_pool(self, pool_id: str) -> list[EvalSession]:
        with self._connect() as con:
            ids = [
                r[0]
                for r in con.execute(
                    "SELECT session_id FROM sessions WHERE pool_id = ? ORDER BY rowid",
                    (pool_id,),
                )
            ]
        return [self.load_session(sid) for sid in ids]

    # -- verdicts (append-only) ----------------------------------------------

    def insert_verdict(self, verdict: Verdict, new_cursor: int, status: str) -> None:
        """Persist the verdict and the session cursor in one transaction."""
        with self._connect() as con:
            try:
                con.execute(
                    "INSERT INTO verdicts VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        verdict.session_id,
                        verdict.image_id,
                        verdict.judgment,
                        json.dumps([r.to_json() for r in verdict.regions]),
                        verdict.comment,
                        verdict.timestamp,
                    ),
                )
            except sqlite3.IntegrityError:
                raise VerdictConflict(
                    f"verdict already recorded for session {verdict.session_id!r}, "
                    f"image {verdict.image_id!r}"
                ) from None
            self._update_session(con, verdict.session_id, new_cursor, status)

    def verdicts_for_session(self, session_id: str) -> list[Verdict]:
        with self._connect() as con:
            rows = con.execute(
                "SELECT image_id, judgment, regions, comment, created_at "
                "FROM verdicts WHERE session_id = ? ORDER BY rowid",
                (session_id,),
            ).fetchall()
        return [_verdict_from_row(session_id, row) for row in rows]

    def verdicts_for_pool(self, pool_id: str) -> list[Verdict]:
        with self._connect() as con:
            rows = con.execute(
                "SELECT v.session_id, v.image_id, v.judgment, v.regions, v.comment, v.created_at "
                "FROM verdicts v JOIN sessions s ON v.session_id = s.session_id "
                "WHERE s.pool_id = ? ORDER BY v.rowid",
                (pool_id,),
            ).fetchall()
        return [_verdict_from_row(row[0], row[1:]) for row in rows]

    def all_verdicts(self) -> list[tuple[str, Verdict]]:
        """(pool_id, verdict) pairs across every pool."""
        with self._connect() as con:
            rows = con.execute(
                "SELECT s.pool_id, v.session_id, v.image_id, v.judgment, v.regions, "
                "v.comment, v.created_at "
                "FROM verdicts v JOIN sessions s ON v.session_id = s.session_id "
                "ORDER BY v.rowid"
            ).fetchall()
        return [(row[0], _verdict_from_row(row[1], row[2:])) for row in rows]


def _verdict_from_row(session_id: str, row: Sequence) -> Verdict:
    image_id, judgment, regions_json, comment, created_at = row
    return Verdict(
        session_id=session_id,
        image_id=image_id,
        judgment=judgment,
        regions=tuple(RegionAnnotation.from_json(r) for r in json.loads(regions_json)),
        comment=comment,
        timestamp=created_at,
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# pool assembly


def pool_id_for(seed: int, quota: PoolQuota) -> str:
    """Deterministic default id: identical (seed, quota) pairs name the
    same pool, so a rebuild can recognize existing work."""
    digest = hashlib.sha1(f"{seed}|{json.dumps(quota.to_json())}".encode()).hexdigest()
    return f"pool-{digest[:10]}"


def create_pool(
    real: DatasetManifest,
    gan: Mapping[Stage | str, np.ndarray],
    ldm: Mapping[Stage | str, np.ndarray],
    quota: PoolQuota,
    *,
    store: TuringStore,
    out_dir: str | Path,
    pool_id: Optional[str] = None,
    seed: int = 0,
    image_root: str | Path | None = None,
) -> EvalPool:
    """Sample the quota from each source, re-encode every selected image
    under an opaque id, and persist the pool.

    Real images come from manifest records (paths resolved against
    ``image_root`` when relative); synthetic images are (N, H, W) float
    stacks keyed by stage. Re-encoding strips original filenames so a
    served URL reveals nothing about provenance.
    """
    gan_arrays = {Stage(k): np.asarray(v) for k, v in gan.items()}
    ldm_arrays = {Stage(k): np.asarray(v) for k, v in ldm.items()}
    if pool_id is None:
        pool_id = pool_id_for(seed, quota)

    pool_dir = Path(out_dir) / pool_id
    pool_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    items: list[PoolItem] = []
    resolution: Optional[int] = None

    def _emit(source: str, stage: Stage, ordinal: int, pixels: np.ndarray) -> None:
        nonlocal resolution
        h, w = pixels.shape
        if h != w:
            raise PoolError(f"pool images must be square, got {h}x{w} for ({source}, {stage.value})")
        if resolution is None:
            resolution = h
        elif h != resolution:
            raise PoolError(
                f"mixed resolutions in pool: {resolution} and {h} "
                f"(({source}, {stage.value}))"
            )
        digest = hashlib.sha1(f"{pool_id}|{seed}|{source}|{stage.value}|{ordinal}".encode())
        image_id = f"img-{digest.hexdigest()[:12]}"
        filename = f"{image_id}.png"
        save_png(pixels, pool_dir / filename)
        items.append(PoolItem(image_id=image_id, true_source=source, stage=stage, path=filename))

    for source, stage, need in quota.cells():
        if source == "real":
            candidates = sorted(real.records_for(stage=stage), key=lambda r: r.image_id)
            if len(candidates) < need:
                raise PoolError(
                    f"pool quota unsatisfiable for (real, {stage.value}): "
                    f"need {need}, have {len(candidates)}"
                )
            for k, rec in enumerate(rng.sample(candidates, need)):
                path = Path(rec.path)
                if not path.is_absolute() and image_root is not None:
                    path = Path(image_root) / path
                _emit(source, stage, k, load_png(path))
        else:
            arrays = gan_arrays if source == "gan" else ldm_arrays
            stack = arrays.get(stage)
            have = 0 if stack is None else int(stack.shape[0])
            if have < need:
                raise PoolError(
                    f"pool quota unsatisfiable for ({source}, {stage.value}): "
                    f"need {need}, have {have}"
                )
            for k, idx in enumerate(rng.sample(range(have), need)):
                _emit(source, stage, k, np.asarray(stack[idx], dtype=np.float64))

    if resolution is None:
        raise PoolError("empty quota produces an empty pool")
    pool = EvalPool(
        pool_id=pool_id,
        items=tuple(items),
        quota=quota,
        seed=seed,
        resolution=resolution,
        image_dir=str(pool_dir),
    )
    store.save_pool(pool)
    return pool


# ---------------------------------------------------------------------------
# sessions and verdicts


def create_session(
    store: TuringStore,
    pool_id: str,
    rater_id: str,
    seed: Optional[int] = None,
) -> EvalSession:
    """Open a session whose presentation order is a seeded permutation of
    the pool. Unseeded sessions draw fresh entropy."""
    pool = store.load_pool(pool_id)
    if seed is None:
        seed = secrets.randbits(32)
    order = [item.image_id for item in pool.items]
    random.Random(seed).shuffle(order)
    session = EvalSession(
        session_id=f"sess-{secrets.token_hex(6)}",
        rater_id=rater_id,
        pool_id=pool_id,
        order=tuple(order),
        cursor=0,
        status="active",
    )
    store.save_session(session)
    return session


def next_image(store: TuringStore, session_id: str) -> dict:
    """Payload for the image at the cursor, or a done marker once every
    item has a verdict. Carries no true source. Idempotent: calling again
    before a verdict returns the same image."""
    session = store.load_session(session_id)
    if session.cursor >= session.total:
        if session.status != "complete":
            store.mark_complete(session_id)
        return {"done": True, "total": session.total, "pool_id": session.pool_id}
    return {
        "image_id": session.order[session.cursor],
        "index": session.cursor,
        "total": session.total,
        "pool_id": session.pool_id,
    }


def submit_verdict(store: TuringStore, verdict: Verdict) -> EvalSession:
    """Validate and persist one verdict, advancing the session cursor.

    The verdict must target the image currently presented. Earlier images
    already have verdicts, so a retry lands on the primary key and raises
    VerdictConflict; later images have not been presented yet.
    """
    session = store.load_session(verdict.session_id)
    if verdict.judgment not in JUDGMENTS:
        raise TuringError(f"judgment must be one of {JUDGMENTS}, got {verdict.judgment!r}")
    if verdict.image_id not in session.order:
        raise UnknownIdError(
            f"image {verdict.image_id!r} is not part of session {verdict.session_id!r}"
        )
    pool = store.load_pool(session.pool_id)
    for region in verdict.regions:
        region.validate(pool.resolution, pool.resolution)

    position = session.order.index(verdict.image_id)
    if position > session.cursor:
        raise TuringError(
            f"image {verdict.image_id!r} has not been presented yet "
            f"(position {position}, cursor {session.cursor})"
        )
    if not verdict.timestamp:
        verdict = Verdict(
            session_id=verdict.session_id,
            image_id=verdict.image_id,
            judgment=verdict.judgment,
            regions=verdict.regions,
            comment=verdict.comment,
            timestamp=_now(),
        )
    new_cursor = max(session.cursor, position + 1)
    status = "complete" if new_cursor >= session.total else session.status
    store.insert_verdict(verdict, new_cursor, status)
    return store.load_session(verdict.session_id)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Tally:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None

    def add(self, correct: bool) -> None:
        self.total += 1
        self.correct += int(correct)

    def to_json(self) -> dict:
        return {"correct": self.correct, "total": self.total, "accuracy": self.accuracy}


@dataclass(frozen=True)
class TuringReport:
    """Aggregated Turing-test outcomes for one pool.

    Accuracy means: real images judged real; synthetic images judged
    fake. ``synthetic`` pools gan and ldm verdicts together. Rater means
    come in two flavors: unweighted (each rater counts once) and weighted
    by verdict count (identical to the pooled union by construction).
    """

    pool_id: str
    n_verdicts: int
    per_source: dict[str, Tally]
    per_stage: dict[str, dict[str, Tally]]
    per_rater: dict[str, dict[str, Tally]]
    rater_mean: dict[str, Optional[float]]
    rater_weighted_mean: dict[str, Optional[float]]
    pie: list[dict]

    @property
    def real_accuracy(self) -> Optional[float]:
        return self.per_source["real"].accuracy

    @property
    def synthetic_accuracy(self) -> Optional[float]:
        return self.per_source["synthetic"].accuracy

    def to_json(self) -> dict:
        return {
            "pool_id": self.pool_id,
            "n_verdicts": self.n_verdicts,
            "real_accuracy": self.real_accuracy,
            "synthetic_accuracy": self.synthetic_accuracy,
            "per_source": {k: t.to_json() for k, t in self.per_source.items()},
            "per_stage": {
                stage: {src: t.to_json() for src, t in row.items()}
                for stage, row in self.per_stage.items()
            },
            "per_rater": {
                rater: {k: t.to_json() for k, t in row.items()}
                for rater, row in self.per_rater.items()
            },
            "rater_mean": dict(self.rater_mean),
            "rater_weighted_mean": dict(self.rater_weighted_mean),
            "pie": list(self.pie),
        }


_REPORT_KEYS = ("real", "gan", "ldm", "synthetic")


def aggregate_results(
    verdicts: Iterable[Verdict],
    pool: EvalPool,
    session_raters: Optional[Mapping[str, str]] = None,
) -> TuringReport:
    """Fold verdicts into per-source, per-stage, and per-rater accuracies.

    ``session_raters`` maps session ids to rater ids; sessions missing
    from the map count as their own rater.
    """
    by_id = {item.image_id: item for item in pool.items}
    per_source = {key: Tally() for key in _REPORT_KEYS}
    per_stage: dict[str, dict[str, Tally]] = {
        stage.value: {src: Tally() for src in SOURCES} for stage in STAGES
    }
    per_rater: dict[str, dict[str, Tally]] = {}
    judged = {src: {"real": 0, "fake": 0} for src in SOURCES}
    n = 0

    for verdict in verdicts:
        item = by_id.get(verdict.image_id)
        if item is None:
            raise UnknownIdError(
                f"verdict references image {verdict.image_id!r} not in pool {pool.pool_id!r}"
            )
        if verdict.judgment not in JUDGMENTS:
            raise TuringError(f"invalid judgment {verdict.judgment!r}")
        n += 1
        source = item.true_source
        correct = (verdict.judgment == "real") == (source == "real")
        judged[source][verdict.judgment] += 1
        per_source[source].add(correct)
        if source != "real":
            per_source["synthetic"].add(correct)
        per_stage[item.stage.value][source].add(correct)
        rater = session_raters.get(verdict.session_id, verdict.session_id) if session_raters else verdict.session_id
        row = per_rater.setdefault(rater, {key: Tally() for key in _REPORT_KEYS})
        row[source].add(correct)
        if source != "real":
            row["synthetic"].add(correct)

    rater_mean: dict[str, Optional[float]] = {}
    rater_weighted: dict[str, Optional[float]] = {}
    for key in _REPORT_KEYS:
        accs = [row[key].accuracy for row in per_rater.values() if row[key].total]
        rater_mean[key] = sum(accs) / len(accs) if accs else None
        weight = sum(row[key].total for row in per_rater.values())
        correct = sum(row[key].correct for row in per_rater.values())
        rater_weighted[key] = correct / weight if weight else None

    pie = [
        {"source": src, "judged_real": judged[src]["real"], "judged_fake": judged[src]["fake"]}
        for src in SOURCES
    ]
    return TuringReport(
        pool_id=pool.pool_id,
        n_verdicts=n,
        per_source=per_source,
        per_stage=per_stage,
        per_rater=per_rater,
        rater_mean=rater_mean,
        rater_weighted_mean=rater_weighted,
        pie=pie,
    )


def report_for_pool(store: TuringStore, pool_id: str) -> TuringReport:
    pool = store.load_pool(pool_id)
    raters = {s.session_id: s.rater_id for s in store.sessions_for_pool(pool_id)}
    return aggregate_results(store.verdicts_for_pool(pool_id), pool, raters)


# ---------------------------------------------------------------------------
# annotation export


@dataclass(frozen=True)
class AnnotationRow:
    """One marked region joined with everything a reviewer needs."""

    pool_id: str
    image_id: str
    true_source: str
    stage: str
    rater_id: str
    session_id: str
    judgment: str
    x: float
    y: float
    w: float
    h: float
    note: Optional[str]
    comment: Optional[str]

    def to_json(self) -> dict:
        return {
            "pool_id": self.pool_id,
            "image_id": self.image_id,
            "true_source": self.true_source,
            "stage": self.stage,
            "rater_id": self.rater_id,
            "session_id": self.session_id,
            "judgment": self.judgment,
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "note": self.note,
            "comment": self.comment,
        }


def export_annotations(
    store: TuringStore,
    *,
    pool_id: Optional[str] = None,
    source: Optional[str] = None,
    rater_id: Optional[str] = None,
    stage: Optional[Stage | str] = None,
) -> list[AnnotationRow]:
    """All marked regions with their verdict context, one row per region,
    newest last. Filters are conjunctive; every filter omitted dumps the
    whole store."""
    stage_value = Stage(stage).value if stage is not None else None
    pools: dict[str, EvalPool] = {}
    raters: dict[str, str] = {}
    rows: list[AnnotationRow] = []
    for vpool_id, verdict in store.all_verdicts():
        if pool_id is not None and vpool_id != pool_id:
            continue
        if vpool_id not in pools:
            pools[vpool_id] = store.load_pool(vpool_id)
            for sess in store.sessions_for_pool(vpool_id):
                raters[sess.session_id] = sess.rater_id
        item = pools[vpool_id].item_by_id(verdict.image_id)
        if source is not None and item.true_source != source:
            continue
        rater = raters.get(verdict.session_id, verdict.session_id)
        if rater_id is not None and rater != rater_id:
            continue
        if stage_value is not None and item.stage.value != stage_value:
            continue
        for region in verdict.regions:
            rows.append(
                AnnotationRow(
                    pool_id=vpool_id,
                    image_id=verdict.image_id,
                    true_source=item.true_source,
                    stage=item.stage.value,
                    rater_id=rater,
                    session_id=verdict.session_id,
                    judgment=verdict.judgment,
                    x=region.x,
                    y=region.y,
                    w=region.w,
                    h=region.h,
                    note=region.note,
                    comment=verdict.comment,
                )
            )
    return rows
