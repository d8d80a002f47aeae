"""Workflow orchestration: one config, eight stages, resumable runs.

Stages run in dependency order, each leaving a completion marker that
records a hash of its inputs (relevant config sections plus upstream
marker digests) and of every file it produced. A stage whose marker
still matches is skipped, so re-running a finished pipeline is a no-op
and editing one config section re-runs only what depends on it.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import re
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from .classify import ClassifierConfig, MixSpec, build_mix, train_classifier
from .datasets import filter_fragmentation, split_sequences
from .diffusion import DiffusionCheckpoint, DiffusionTrainConfig, build_codec, train_diffusion
from .fid import FidHistory, fid_of_checkpoint, select_best, write_fid_report
from .gan import GanCheckpoint, GanTrainConfig, train_gan
from .imaging import load_batch, save_png
from .metrics import aggregate_seeds, compute_report
from .records import STAGES, DatasetManifest, ImageRecord, Source, Split, Stage
from .toygen import build_toy_corpus
from .turing import PoolQuota, TuringStore, create_pool, pool_id_for


class PipelineError(RuntimeError):
    """Base for orchestration failures."""


class ConfigError(PipelineError):
    """Config file rejected: unknown key, bad type, or missing path."""


class DependencyError(PipelineError):
    """A requested stage needs output another stage has not produced."""


# ---------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class _Field:
    default: object
    kind: str  # bool | int | float | str | int_list | mix_list


_SCHEMA: dict = {
    "out_dir": _Field("runs/toy", "str"),
    "seed": _Field(0, "int"),
    "toy": _Field(True, "bool"),
    "dataset": {
        "manifest": _Field("", "str"),
        "image_root": _Field("", "str"),
        "sequences_per_stage": _Field(8, "int"),
        "train_per_stage": _Field(4, "int"),
        "test_per_stage": _Field(2, "int"),
        "resolution": _Field(64, "int"),
        "fragmentation_max": _Field(20.0, "float"),
    },
    "gan": {
        "steps": _Field(80, "int"),
        "batch_size": _Field(8, "int"),
        "learning_rate": _Field(1e-3, "float"),
        "r1_weight": _Field(10.0, "float"),
        "style_dim": _Field(64, "int"),
        "base_channels": _Field(16, "int"),
        "checkpoint_interval": _Field(40, "int"),
        "augmentation": _Field(True, "bool"),
    },
    "ldm": {
        "epochs": _Field(20, "int"),
        "batch_size": _Field(16, "int"),
        "learning_rate": _Field(2e-3, "float"),
        "timesteps": _Field(50, "int"),
        "fid_interval": _Field(10, "int"),
        "codec": _Field("downsample:4", "str"),
        "beta_start": _Field(1e-4, "float"),
        "beta_end": _Field(0.02, "float"),
    },
    "fid": {
        "extractor": _Field("toy-pool", "str"),
        "n_samples": _Field(24, "int"),
    },
    "generate": {
        "per_stage": _Field(12, "int"),
    },
    "classify": {
        "family": _Field("conv_small", "str"),
        "resolution": _Field(32, "int"),
        "batch_size": _Field(32, "int"),
        "learning_rate": _Field(1e-3, "float"),
        "max_epochs": _Field(12, "int"),
        "patience": _Field(6, "int"),
        "val_fraction": _Field(0.25, "float"),
        "seeds": _Field([0, 1], "int_list"),
        "mix": _Field(
            [{"real": 4, "gan": 2, "ldm": 2}, {"real": 4, "gan": 0, "ldm": 0}],
            "mix_list",
        ),
    },
    "service": {
        "host": _Field("127.0.0.1", "str"),
        "port": _Field(8765, "int"),
        "pool_real": _Field(2, "int"),
        "pool_gan": _Field(1, "int"),
        "pool_ldm": _Field(1, "int"),
        "pool_seed": _Field(0, "int"),
    },
}

_MIX_KEYS = ("real", "gan", "ldm")


def _check_type(path: str, value, kind: str):
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{path}': expected bool, got {type(value).__name__}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{path}': expected int, got {type(value).__name__}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}': expected float, got {type(value).__name__}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key '{path}': expected str, got {type(value).__name__}")
        return value
    if kind == "int_list":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ConfigError(f"config key '{path}': expected a list of ints")
        return list(value)
    if kind == "mix_list":
        if not isinstance(value, list):
            raise ConfigError(f"config key '{path}': expected a list of tables")
        out = []
        for i, entry in enumerate(value):
            if not isinstance(entry, dict):
                raise ConfigError(f"config key '{path}[{i}]': expected a table")
            for key in entry:
                if key not in _MIX_KEYS:
                    raise ConfigError(
                        f"unknown config key '{path}[{i}].{key}'"
                        + _suggestion(key, _MIX_KEYS)
                    )
            row = {}
            for key in _MIX_KEYS:
                row[key] = _check_type(f"{path}[{i}].{key}", entry.get(key, 0), "int")
            out.append(row)
        return out
    raise AssertionError(f"unhandled kind {kind}")


def _suggestion(key: str, candidates) -> str:
    close = difflib.get_close_matches(key, list(candidates), n=1)
    return f"; did you mean '{close[0]}'?" if close else ""


def normalize_config(data: dict) -> dict:
    """Defaults filled, unknown keys rejected, values type-checked.
    Idempotent: normalizing a normalized document changes nothing."""
    return _normalize_level(data, _SCHEMA, prefix="")


def _normalize_level(data: dict, schema: dict, prefix: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"config key '{prefix or '<root>'}': expected a table")
    for key in data:
        if key not in schema:
            path = f"{prefix}{key}"
            raise ConfigError(f"unknown config key '{path}'" + _suggestion(key, schema))
    out = {}
    for key, node in schema.items():
        path = f"{prefix}{key}"
        if isinstance(node, dict):
            out[key] = _normalize_level(data.get(key, {}), node, prefix=f"{path}.")
        elif key in data:
            out[key] = _check_type(path, data[key], node.kind)
        else:
            out[key] = json.loads(json.dumps(node.default))  # fresh copy
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Normalized configuration plus where it came from."""

    data: dict
    source: str = "<memory>"

    @property
    def out_dir(self) -> Path:
        return Path(self.data["out_dir"])

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def toy(self) -> bool:
        return self.data["toy"]

    def section(self, name: str) -> dict:
        return self.data[name]

    @property
    def config_hash(self) -> str:
        return _digest_obj(self.data)


def _digest_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def validate_config(
    path: str | Path,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> PipelineConfig:
    """Parse, normalize, and echo the TOML config.

    ``seed`` and ``out_dir`` are command-line overrides applied before
    normalization. The normalized document lands in the output directory
    so a run's exact inputs stay on record.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
    if seed is not None:
        raw["seed"] = seed
    if out_dir is not None:
        raw["out_dir"] = out_dir
    data = normalize_config(raw)
    config = PipelineConfig(data=data, source=str(path))
    _check_paths(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    echo = config.out_dir / "config.normalized.json"
    echo.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return config


def _check_paths(config: PipelineConfig) -> None:
    if config.toy:
        return
    dataset = config.section("dataset")
    manifest = dataset["manifest"]
    image_root = dataset["image_root"]
    if not manifest or not Path(manifest).is_file():
        raise ConfigError(
            f"toy = false requires dataset.manifest to point at an existing file, got {manifest!r}"
        )
    if not image_root or not Path(image_root).is_dir():
        raise ConfigError(
            f"toy = false requires dataset.image_root to be an existing directory, got {image_root!r}"
        )


# ---------------------------------------------------------------------------
# stage graph

STAGE_ORDER = (
    "ingest",
    "train-gen",
    "select",
    "generate",
    "train-clf",
    "evaluate",
    "report",
    "serve",
)

# evaluate listed first where it matters: a bare `report` should name it.
STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "train-gen": ("ingest",),
    "select": ("train-gen", "ingest"),
    "generate": ("select",),
    "train-clf": ("ingest", "generate"),
    "evaluate": ("train-clf",),
    "report": ("evaluate", "select", "generate"),
    "serve": ("report",),
}

_STAGE_SECTIONS: dict[str, tuple[str, ...]] = {
    "ingest": ("toy", "seed", "dataset"),
    "train-gen": ("seed", "gan", "ldm"),
    "select": ("seed", "fid"),
    "generate": ("seed", "generate"),
    "train-clf": ("seed", "classify"),
    "evaluate": ("classify",),
    "report": ("seed", "service"),
    "serve": ("service",),
}

_FAMILIES = ("gan", "ldm")


@dataclass
class _Ctx:
    config: PipelineConfig

    @property
    def out(self) -> Path:
        return self.config.out_dir

    def manifest(self) -> DatasetManifest:
        return DatasetManifest.from_jsonl(self.out / "data" / "manifest.jsonl")

    def stage_images(self, manifest: DatasetManifest, stage: Stage, split: Split) -> np.ndarray:
        records = manifest.records_for(stage=stage, split=split)
        return load_batch([self.out / r.path for r in records])


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _marker_path(out: Path, stage: str) -> Path:
    return out / "markers" / f"{stage}.json"


def _write_marker(ctx: _Ctx, stage: str, input_hash: str, outputs: list[Path]) -> dict:
    entries = {}
    for path in sorted(set(outputs)):
        rel = str(path.relative_to(ctx.out))
        entries[rel] = _file_digest(path)
    marker = {
        "stage": stage,
        "input_hash": input_hash,
        "outputs": entries,
        "output_hash": _digest_obj(entries),
        "completed_at": datetime.now(timezone.utc).isoformat(),
    }
    path = _marker_path(ctx.out, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(marker, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return marker


def _read_marker(out: Path, stage: str) -> Optional[dict]:
    path = _marker_path(out, stage)
    if not path.is_file():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _input_hash(ctx: _Ctx, stage: str) -> str:
    sections = {
        name: ctx.config.data[name] if name in ctx.config.data else None
        for name in _STAGE_SECTIONS[stage]
    }
    deps = {}
    for dep in STAGE_DEPS[stage]:
        marker = _read_marker(ctx.out, dep)
        deps[dep] = marker["output_hash"] if marker else None
    return _digest_obj({"sections": sections, "deps": deps})


def _marker_satisfied(ctx: _Ctx, stage: str, input_hash: str) -> bool:
    marker = _read_marker(ctx.out, stage)
    if marker is None or marker.get("input_hash") != input_hash:
        return False
    for rel, digest in marker.get("outputs", {}).items():
        path = ctx.out / rel
        if not path.is_file() or _file_digest(path) != digest:
            return False
    return True


# ---------------------------------------------------------------------------
# stage bodies; each returns the files it produced


def _stage_ingest(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    dataset = cfg.section("dataset")
    data_dir = ctx.out / "data"
    images_dir = data_dir / "images"
    if cfg.toy:
        corpus = build_toy_corpus(
            sequences=dataset["sequences_per_stage"],
            seed=cfg.seed,
            resolution=dataset["resolution"],
            out_dir=images_dir,
        )
        # rebase record paths on the run directory so one root serves all stages
        corpus = corpus.with_records(
            replace(r, path=f"data/images/{r.path}") for r in corpus.records
        )
    else:
        corpus = DatasetManifest.from_jsonl(dataset["manifest"])
        root = Path(dataset["image_root"]).resolve()
        corpus = corpus.with_records(
            replace(r, path=str(root / r.path)) for r in corpus.records
        )
    filtered = filter_fragmentation(corpus, dataset["fragmentation_max"])
    split = split_sequences(
        filtered,
        train_per_stage=dataset["train_per_stage"],
        test_per_stage=dataset["test_per_stage"],
        seed=cfg.seed,
    )
    manifest_path = data_dir / "manifest.jsonl"
    split.to_jsonl(manifest_path)
    outputs = [manifest_path]
    if cfg.toy:
        outputs += [ctx.out / r.path for r in split.records]
    return outputs


def _stage_train_gen(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    manifest = ctx.manifest()
    gan_cfg = cfg.section("gan")
    ldm_cfg = cfg.section("ldm")
    resolution = cfg.section("dataset")["resolution"]
    outputs: list[Path] = []
    for stage in STAGES:
        images = ctx.stage_images(manifest, stage, Split.TRAIN)
        gan_dir = ctx.out / "checkpoints" / "gan" / stage.value
        result = train_gan(
            images,
            GanTrainConfig(
                steps=gan_cfg["steps"],
                batch_size=min(gan_cfg["batch_size"], len(images)),
                lr_generator=gan_cfg["learning_rate"],
                lr_discriminator=gan_cfg["learning_rate"],
                r1_weight=gan_cfg["r1_weight"],
                augmentation=gan_cfg["augmentation"],
                resolution=resolution,
                style_dim=gan_cfg["style_dim"],
                checkpoint_interval=gan_cfg["checkpoint_interval"],
                seed=cfg.seed + stage.ordinal,
            ),
            stage=stage,
            out_dir=gan_dir,
            base_channels=gan_cfg["base_channels"],
        )
        outputs += [gan_dir / c.ref for c in result.checkpoints]

        codec = build_codec(ldm_cfg["codec"])
        ldm_dir = ctx.out / "checkpoints" / "ldm" / stage.value
        diff = train_diffusion(
            images,
            codec,
            DiffusionTrainConfig(
                epochs=ldm_cfg["epochs"],
                batch_size=min(ldm_cfg["batch_size"], len(images)),
                learning_rate=ldm_cfg["learning_rate"],
                T=ldm_cfg["timesteps"],
                fid_interval_epochs=ldm_cfg["fid_interval"],
                seed=cfg.seed + stage.ordinal,
                beta_start=ldm_cfg["beta_start"],
                beta_end=ldm_cfg["beta_end"],
            ),
            stage=stage,
            out_dir=ldm_dir,
        )
        outputs += [ldm_dir / c.ref for c in diff.checkpoints]
    return outputs


_EPOCH_RE = re.compile(r"_[es](\d+)\.ckpt$")


def _checkpoint_files(ctx: _Ctx, family: str, stage: Stage) -> list[Path]:
    folder = ctx.out / "checkpoints" / family / stage.value
    files = sorted(
        folder.glob(f"{family}_{stage.value}_*.ckpt"),
        key=lambda p: int(_EPOCH_RE.search(p.name).group(1)),
    )
    if not files:
        raise PipelineError(f"no {family} checkpoints found for stage {stage.value}")
    return files


def _load_checkpoint(family: str, path: Path):
    return (GanCheckpoint if family == "gan" else DiffusionCheckpoint).load(path)


def _stage_select(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    manifest = ctx.manifest()
    fid_cfg = cfg.section("fid")
    histories = []
    selected: dict[str, dict[str, dict]] = {family: {} for family in _FAMILIES}
    for family in _FAMILIES:
        for stage in STAGES:
            real = ctx.stage_images(manifest, stage, Split.TRAIN)
            history = FidHistory(stage=stage.value, family=family, entries=[])
            paths = {}
            for path in _checkpoint_files(ctx, family, stage):
                entry = fid_of_checkpoint(
                    _load_checkpoint(family, path),
                    real,
                    n_samples=fid_cfg["n_samples"],
                    extractor=fid_cfg["extractor"],
                    seed=cfg.seed,
                )
                history.add(entry)
                paths[entry.ref] = str(path.relative_to(ctx.out))
            best = select_best(history)
            selected[family][stage.value] = {
                "ref": best.ref,
                "epoch": best.epoch,
                "fid": best.fid,
                "path": paths[best.ref],
            }
            histories.append(history)
    reports_dir = ctx.out / "reports"
    fid_csv = reports_dir / "fid.csv"
    write_fid_report(histories, fid_csv)
    selected_path = ctx.out / "selected.json"
    selected_path.write_text(json.dumps(selected, indent=2, sort_keys=True) + "\n")
    return [fid_csv, selected_path]


def _stage_generate(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    selected = json.loads((ctx.out / "selected.json").read_text())
    per_stage = cfg.section("generate")["per_stage"]
    outputs: list[Path] = []
    source_for = {"gan": Source.SYNTHETIC_GAN, "ldm": Source.SYNTHETIC_LDM}
    for family in _FAMILIES:
        records = []
        for stage in STAGES:
            chosen = selected[family][stage.value]
            checkpoint = _load_checkpoint(family, ctx.out / chosen["path"])
            images = checkpoint.sample(per_stage, seed=cfg.seed + 100 + stage.ordinal)
            for k in range(per_stage):
                rel = f"synth/{family}/{stage.value}/{k:04d}.png"
                save_png(images[k], ctx.out / rel)
                outputs.append(ctx.out / rel)
                records.append(
                    ImageRecord(
                        image_id=f"{family}-{stage.value}-{k:04d}",
                        sequence_id=f"{family}-{stage.value}-{k:04d}",
                        stage=stage,
                        source=source_for[family],
                        path=rel,
                    )
                )
        manifest = DatasetManifest.from_records(
            records, provenance=f"sampled from {family} checkpoints, seed {cfg.seed}"
        )
        manifest_path = ctx.out / "synth" / f"{family}_manifest.jsonl"
        manifest.to_jsonl(manifest_path)
        outputs.append(manifest_path)
    return outputs


def _mix_spec(entry: dict) -> MixSpec:
    return MixSpec(real_n=entry["real"], gan_n=entry["gan"], ldm_n=entry["ldm"])


def _preds_name(spec: MixSpec, seed: int) -> str:
    return f"preds_r{spec.real_n}_g{spec.gan_n}_l{spec.ldm_n}_s{seed}.json"


def _stage_train_clf(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    clf = cfg.section("classify")
    manifest = ctx.manifest()
    pools = {
        "real": manifest,
        "gan": DatasetManifest.from_jsonl(ctx.out / "synth" / "gan_manifest.jsonl"),
        "ldm": DatasetManifest.from_jsonl(ctx.out / "synth" / "ldm_manifest.jsonl"),
    }
    test_records = manifest.records_for(split=Split.TEST)
    test_images = load_batch([ctx.out / r.path for r in test_records])
    test_labels = [r.stage.ordinal for r in test_records]

    clf_dir = ctx.out / "clf"
    clf_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for entry in clf["mix"]:
        spec = _mix_spec(entry)
        for seed in clf["seeds"]:
            mix = build_mix(pools, spec, seed)
            images = load_batch([ctx.out / r.path for r in mix.records])
            labels = np.array([r.stage.ordinal for r in mix.records], dtype=np.int64)
            model = train_classifier(
                images,
                labels,
                ClassifierConfig(
                    family=clf["family"],
                    batch_size=clf["batch_size"],
                    learning_rate=clf["learning_rate"],
                    patience_epochs=clf["patience"],
                    input_resolution=clf["resolution"],
                    max_epochs=clf["max_epochs"],
                    val_fraction=clf["val_fraction"],
                    seed=seed,
                ),
            )
            payload = {
                "spec": {"real": spec.real_n, "gan": spec.gan_n, "ldm": spec.ldm_n},
                "seed": seed,
                "y_true": [int(v) for v in test_labels],
                "y_pred": [int(v) for v in model.predict(test_images)],
            }
            path = clf_dir / _preds_name(spec, seed)
            path.write_text(json.dumps(payload, sort_keys=True) + "\n")
            outputs.append(path)
    return outputs


def _stage_evaluate(ctx: _Ctx) -> list[Path]:
    import csv

    cfg = ctx.config
    clf = cfg.section("classify")
    reports_dir = ctx.out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for entry in clf["mix"]:
        spec = _mix_spec(entry)
        for seed in clf["seeds"]:
            path = ctx.out / "clf" / _preds_name(spec, seed)
            if not path.is_file():
                raise PipelineError(f"missing predictions file {path}")
            payload = json.loads(path.read_text())
            report = compute_report(payload["y_true"], payload["y_pred"], seed=seed)
            rows.append((spec, seed, report))

    results_path = reports_dir / "clf_results.csv"
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec_real", "spec_gan", "spec_ldm", "seed",
             "accuracy", "f1", "precision", "recall", "mcc"]
        )
        for spec, seed, report in rows:
            writer.writerow(
                [spec.real_n, spec.gan_n, spec.ldm_n, seed]
                + [f"{report.value(m):.6f}" for m in ("accuracy", "f1", "precision", "recall", "mcc")]
            )

    aggregated_path = reports_dir / "clf_aggregated.csv"
    with open(aggregated_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec_real", "spec_gan", "spec_ldm", "metric",
             "mean", "std", "ci_low", "ci_high", "n", "z"]
        )
        for entry in clf["mix"]:
            spec = _mix_spec(entry)
            reports = [r for s, _, r in rows if s == spec]
            if len(reports) < 2:
                continue
            agg = aggregate_seeds(reports)
            for metric, summary in agg.metrics.items():
                writer.writerow(
                    [spec.real_n, spec.gan_n, spec.ldm_n, metric,
                     f"{summary.mean:.6f}", f"{summary.std:.6f}",
                     f"{summary.ci_low:.6f}", f"{summary.ci_high:.6f}",
                     agg.n, agg.z]
                )
    return [results_path, aggregated_path]


def _stage_report(ctx: _Ctx) -> list[Path]:
    cfg = ctx.config
    service = cfg.section("service")
    manifest = ctx.manifest()
    quota = PoolQuota.uniform(
        real=service["pool_real"], gan=service["pool_gan"], ldm=service["pool_ldm"]
    )
    store = TuringStore(ctx.out / "turing" / "store.sqlite")
    pool_id = pool_id_for(service["pool_seed"], quota)
    if pool_id in store.pool_ids():
        pool = store.load_pool(pool_id)  # same seed and quota: reuse as-is
    else:
        test_manifest = manifest.subset(lambda r: r.split is Split.TEST)
        synth = {}
        for family in _FAMILIES:
            fam_manifest = DatasetManifest.from_jsonl(
                ctx.out / "synth" / f"{family}_manifest.jsonl"
            )
            synth[family] = {
                stage: load_batch(
                    [ctx.out / r.path for r in fam_manifest.records_for(stage=stage)]
                )
                for stage in STAGES
            }
        pool = create_pool(
            test_manifest,
            synth["gan"],
            synth["ldm"],
            quota,
            store=store,
            out_dir=ctx.out / "turing" / "pools",
            seed=service["pool_seed"],
            image_root=ctx.out,
        )

    summary = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "fid_selected": json.loads((ctx.out / "selected.json").read_text()),
        "classification_results": "reports/clf_results.csv",
        "classification_aggregated": "reports/clf_aggregated.csv",
        "turing": {
            "store": "turing/store.sqlite",
            "pool_id": pool.pool_id,
            "n_items": len(pool.items),
            "bind": f"{service['host']}:{service['port']}",
        },
    }
    summary_path = ctx.out / "reports" / "summary.json"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # the sqlite store is a living artifact (verdicts accumulate), so the
    # marker tracks only the immutable outputs
    return [summary_path] + [Path(pool.image_dir) / item.path for item in pool.items]


def _stage_serve(ctx: _Ctx) -> list[Path]:
    from .service import serve

    service = ctx.config.section("service")
    serve(
        ctx.out / "turing" / "store.sqlite",
        host=service["host"],
        port=service["port"],
    )
    return []  # unreachable: serve blocks until interrupted


_STAGE_FUNCS: dict[str, Callable[[_Ctx], list[Path]]] = {
    "ingest": _stage_ingest,
    "train-gen": _stage_train_gen,
    "select": _stage_select,
    "generate": _stage_generate,
    "train-clf": _stage_train_clf,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
    "serve": _stage_serve,
}

DEFAULT_STAGES = tuple(s for s in STAGE_ORDER if s != "serve")


@dataclass(frozen=True)
class RunResult:
    executed: tuple[str, ...]
    skipped: tuple[str, ...]

    @property
    def exit_code(self) -> int:
        return 0


def run(config: PipelineConfig, stages: Optional[Sequence[str]] = None) -> RunResult:
    """Execute the requested stages (default: everything except serve).

    Stages run in dependency order. A stage is skipped when its marker
    matches its current inputs and all recorded outputs are intact.
    Requested stages do not pull in their dependencies implicitly; a
    missing dependency is an error naming the stage to run first.
    """
    requested = list(stages) if stages else list(DEFAULT_STAGES)
    for name in requested:
        if name not in STAGE_ORDER:
            raise ConfigError(
                f"unknown stage '{name}'" + _suggestion(name, STAGE_ORDER)
            )
    ordered = [s for s in STAGE_ORDER if s in requested]
    _check_paths(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)

    ctx = _Ctx(config=config)
    executed: list[str] = []
    skipped: list[str] = []
    for stage in ordered:
        for dep in STAGE_DEPS[stage]:
            if dep in executed or dep in skipped:
                continue
            if _read_marker(ctx.out, dep) is None:
                raise DependencyError(
                    f"stage '{stage}' requires output of stage '{dep}'; run '{dep}' first"
                )
        if stage == "serve":
            _write_run_manifest(ctx)
            _STAGE_FUNCS[stage](ctx)  # blocks
            continue
        input_hash = _input_hash(ctx, stage)
        if _marker_satisfied(ctx, stage, input_hash):
            skipped.append(stage)
            continue
        outputs = _STAGE_FUNCS[stage](ctx)
        _write_marker(ctx, stage, input_hash, outputs)
        executed.append(stage)

    _write_run_manifest(ctx)
    return RunResult(executed=tuple(executed), skipped=tuple(skipped))


def _write_run_manifest(ctx: _Ctx) -> None:
    artifacts = {}
    stage_hashes = {}
    for stage in STAGE_ORDER:
        marker = _read_marker(ctx.out, stage)
        if marker is None:
            continue
        stage_hashes[stage] = marker["output_hash"]
        artifacts.update(marker["outputs"])
    manifest = {
        "seed": ctx.config.seed,
        "config_hash": ctx.config.config_hash,
        "stages": stage_hashes,
        "artifacts": artifacts,
        "written_at": datetime.now(timezone.utc).isoformat(),
    }
    path = ctx.out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
