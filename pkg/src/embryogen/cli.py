"""Command line entry point.

Failures print one JSON object to stderr so wrapping scripts can parse
them: {"error": {"type": ..., "message": ...}}. Exit codes: 2 config,
3 missing dependency stage, 1 anything else.
"""

from __future__ import annotations

import json
import sys
from typing import Optional

import click

from . import pipeline
from .pipeline import ConfigError, DependencyError, PipelineError


def _fail(exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")
    if isinstance(exc, ConfigError):
        sys.exit(2)
    if isinstance(exc, DependencyError):
        sys.exit(3)
    sys.exit(1)


def _split_stages(stages: tuple[str, ...]) -> Optional[list[str]]:
    names = [part for value in stages for part in value.split(",") if part]
    return names or None


@click.group()
def main() -> None:
    """Embryo image workbench: generators, FID selection, classification
    grids, and the expert Turing-test service."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML config file.")
@click.option("--stages", multiple=True, help="Subset of stages to run; comma-separable.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", default=None, help="Override the output directory.")
def run(config_path: str, stages: tuple[str, ...], seed: Optional[int], out: Optional[str]) -> None:
    """Run the pipeline (default: every stage except serve)."""
    try:
        config = pipeline.validate_config(config_path, seed=seed, out_dir=out)
        result = pipeline.run(config, stages=_split_stages(stages))
    except PipelineError as exc:
        _fail(exc)
        return
    for stage in result.executed:
        click.echo(f"ran {stage}")
    for stage in result.skipped:
        click.echo(f"skipped {stage} (up to date)")
    sys.exit(result.exit_code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML config file.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", default=None, help="Override the output directory.")
def validate(config_path: str, seed: Optional[int], out: Optional[str]) -> None:
    """Validate and echo the normalized config."""
    try:
        config = pipeline.validate_config(config_path, seed=seed, out_dir=out)
    except PipelineError as exc:
        _fail(exc)
        return
    click.echo(json.dumps(config.data, indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML config file.")
@click.option("--out", default=None, help="Override the output directory.")
def serve(config_path: str, out: Optional[str]) -> None:
    """Serve the Turing test over HTTP (requires a completed run)."""
    try:
        config = pipeline.validate_config(config_path, out_dir=out)
        pipeline.run(config, stages=["serve"])
    except PipelineError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
