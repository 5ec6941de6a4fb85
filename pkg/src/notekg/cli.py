"""Command-line entry points for the pipeline stages.

Exit codes: 0 ok, 2 config/validation error, 3 stage failure, 4 backend
exhaustion (some queries permanently failed; partial artifacts are kept).
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, PipelineConfig
from .pipeline import (
    StageError,
    run_pipeline,
    stage_build_kg,
    stage_eval,
    stage_extract,
    stage_identify,
    stage_ingest,
    stage_postprocess,
    stage_preprocess,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3
EXIT_BACKEND_EXHAUSTION = 4

logger = logging.getLogger(__name__)


def _load_config(config_path: str | None) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    return PipelineConfig.from_file(config_path)


def _config_base_dir(config_path: str | None) -> Path | None:
    return Path(config_path).resolve().parent if config_path else None


config_option = click.option("--config", "config_path", type=click.Path(exists=True))
in_option = click.option("--in", "in_path", type=click.Path(exists=True), required=True)
out_option = click.option("--out", "out_path", type=click.Path(), required=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Build knowledge graphs of disease relations from clinical notes."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@in_option
@out_option
@click.option("--format", "source_format", type=click.Choice(["jsonl", "csv"]), default="jsonl")
def ingest(in_path, out_path, source_format):
    """Read a raw note file and write the validated corpus artifact."""
    count = stage_ingest(Path(in_path), Path(out_path), source_format)
    click.echo(f"ingested {count} notes")


@main.command()
@config_option
@in_option
@out_option
def preprocess(config_path, in_path, out_path):
    """Drop short notes and near-duplicates."""
    config = _load_config(config_path)
    counts = stage_preprocess(Path(in_path), Path(out_path), config)
    click.echo(
        f"kept {counts['kept']}/{counts['input']} notes "
        f"({counts['dropped_short']} short, {counts['dropped_duplicates']} duplicates)"
    )


@main.command()
@config_option
@in_option
@out_option
@click.option("--disease", required=True)
def identify(config_path, in_path, out_path, disease):
    """Select the notes that mention the disease."""
    config = _load_config(config_path)
    counts = stage_identify(
        Path(in_path), Path(out_path), disease, config, _config_base_dir(config_path)
    )
    click.echo(f"identified {counts['identified']}/{counts['input']} notes for {disease!r}")


@main.command()
@config_option
@in_option
@out_option
@click.option("--disease", required=True)
@click.option("--backend", "backend_name", default=None)
@click.option(
    "--style",
    type=click.Choice(["zero", "few", "instruct", "guided"]),
    default=None,
    help="Override the configured prompt style.",
)
@click.option("--resume", is_flag=True, help="Skip queries already in the checkpoint.")
def extract(config_path, in_path, out_path, disease, backend_name, style, resume):
    """Query the model backend for every question/note combination."""
    config = _load_config(config_path)
    if style is not None:
        config.prompt_style = style
        config.validate()
    result = stage_extract(
        Path(in_path),
        Path(out_path),
        disease,
        config,
        backend_name,
        resume,
        _config_base_dir(config_path),
    )
    click.echo(f"{len(result.records)} records, {len(result.failures)} failures")
    if result.failures:
        sys.exit(EXIT_BACKEND_EXHAUSTION)


@main.command("postprocess")
@config_option
@in_option
@out_option
def postprocess_cmd(config_path, in_path, out_path):
    """Aggregate query records into final relations."""
    config = _load_config(config_path)
    counts = stage_postprocess(
        Path(in_path), Path(out_path), config, _config_base_dir(config_path)
    )
    click.echo(
        f"{counts['final_relations']} relations from {counts['records']} records"
    )


@main.command("build-kg")
@in_option
@out_option
@click.option("--format", "kg_format", type=click.Choice(["json", "dot", "csv"]), default="json")
def build_kg(in_path, out_path, kg_format):
    """Assemble the knowledge graph from a relations artifact."""
    edges = stage_build_kg(Path(in_path), Path(out_path), kg_format)
    click.echo(f"wrote graph with {edges} edges")


@main.command("eval")
@config_option
@in_option
@out_option
@click.option("--gold", "gold_path", type=click.Path(exists=True), required=True)
@click.option("--records", "records_path", type=click.Path(exists=True), default=None)
def eval_cmd(config_path, in_path, out_path, gold_path, records_path):
    """Score a knowledge graph against gold annotations."""
    config = _load_config(config_path)
    summary = stage_eval(
        Path(in_path),
        Path(gold_path),
        Path(out_path),
        config,
        Path(records_path) if records_path else None,
    )
    click.echo(f"evaluated {summary['rows']} (disease, category) rows")


@main.command()
@config_option
@in_option
@out_option
@click.option("--disease", required=True)
@click.option("--backend", "backend_name", default=None)
@click.option("--gold", "gold_path", type=click.Path(exists=True), default=None)
@click.option("--format", "source_format", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option(
    "--style",
    type=click.Choice(["zero", "few", "instruct", "guided"]),
    default=None,
    help="Override the configured prompt style.",
)
@click.option("--resume", is_flag=True)
def pipeline(config_path, in_path, out_path, disease, backend_name, gold_path, source_format, style, resume):
    """Run every stage end to end into an output directory."""
    config = _load_config(config_path)
    if style is not None:
        config.prompt_style = style
        config.validate()
    manifest = run_pipeline(
        Path(in_path),
        Path(out_path),
        disease,
        config,
        backend_name,
        Path(gold_path) if gold_path else None,
        source_format,
        resume,
        _config_base_dir(config_path),
    )
    failures = manifest.stages.get("extract", {}).get("failures", 0)
    click.echo(f"pipeline complete; manifest at {Path(out_path) / 'run_manifest.json'}")
    if failures:
        sys.exit(EXIT_BACKEND_EXHAUSTION)


def run(args: list[str] | None = None) -> int:
    """Run the CLI with the documented exit-code contract."""
    try:
        main.main(args=args, standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return EXIT_VALIDATION
    except click.UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return EXIT_VALIDATION
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)
    except StageError as exc:
        click.echo(f"stage failure: {exc}", err=True)
        return EXIT_STAGE_FAILURE
    except Exception as exc:  # noqa: BLE001 - stage boundary
        click.echo(f"stage failure: {exc}", err=True)
        return EXIT_STAGE_FAILURE
    return EXIT_OK


def entrypoint() -> None:  # pragma: no cover - console script shim
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
