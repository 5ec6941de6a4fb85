"""Stage orchestration: each pipeline stage reads and writes a versioned
artifact, and a full run records a manifest (config hash, backend, per-stage
counts) so results are reproducible and resumable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import corpus as corpus_mod
from . import extraction, kgraph
from .config import (
    PipelineConfig,
    build_alias_provider,
    build_backend,
    build_exemplars,
    build_ner_provider,
    build_similarity_provider,
    resolve_path,
)
from .evaluation import load_gold, precision_recall, safety_metrics
from .extraction import Relation, RunResult
from .prompting import EntityCategory
from .terminology import expand_aliases, identify_disease_notes

logger = logging.getLogger(__name__)

RELATIONS_SCHEMA_VERSION = 1


class StageError(RuntimeError):
    """A pipeline stage could not produce its artifact."""


@dataclass
class RunManifest:
    config_digest: str
    backend: str = ""
    stages: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        payload = {
            "config_digest": self.config_digest,
            "backend": self.backend,
            "stages": self.stages,
        }
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")


def stage_ingest(source: Path, out: Path, format: str = "jsonl") -> int:
    notes = corpus_mod.ingest_notes(source, format)
    corpus_mod.save_notes(notes, out)
    return len(notes)


def stage_preprocess(source: Path, out: Path, config: PipelineConfig) -> dict:
    notes = corpus_mod.ingest_notes(source, "jsonl")
    provider = build_similarity_provider(config)
    result = corpus_mod.preprocess_detailed(
        notes,
        provider,
        threshold_preprocessing=config.threshold_preprocessing,
        min_words=config.min_words,
    )
    corpus_mod.save_notes(result.corpus, out)
    return {
        "input": len(notes),
        "kept": len(result.corpus),
        "dropped_short": len(result.dropped_short),
        "dropped_duplicates": len(result.dropped_duplicates),
    }


def stage_identify(
    source: Path, out: Path, disease: str, config: PipelineConfig, base_dir: Path | None = None
) -> dict:
    notes = corpus_mod.ingest_notes(source, "jsonl")
    concept = expand_aliases(disease, build_alias_provider(config, base_dir))
    if concept.unknown:
        logger.warning("no aliases found for %r; matching the input form only", disease)
    selected = identify_disease_notes(
        notes,
        concept,
        build_ner_provider(config, base_dir),
        build_similarity_provider(config),
        threshold_notes_identification=config.threshold_notes_identification,
    )
    corpus_mod.save_notes(corpus_mod.Corpus(tuple(selected)), out)
    return {"input": len(notes), "identified": len(selected), "aliases": len(concept.aliases)}


def stage_extract(
    source: Path,
    out: Path,
    disease: str,
    config: PipelineConfig,
    backend_name: str | None = None,
    resume: bool = False,
    base_dir: Path | None = None,
) -> RunResult:
    """Query the backend for every (category, question, note) combination.

    Records append to the checkpoint file as they complete; with ``resume``
    the existing checkpoint is honored and completed queries are skipped.
    Failures are written next to the records as a manifest, never dropped.
    """
    notes = corpus_mod.ingest_notes(source, "jsonl")
    backend = build_backend(config, backend_name, base_dir)

    completed: set[str] = set()
    prior_records = []
    if resume and out.exists():
        prior_records = extraction.load_records(out)
        completed = extraction.completed_keys(prior_records)
        logger.info("resuming: %d completed queries found", len(completed))

    mode = "a" if resume and out.exists() else "w"
    with out.open(mode, encoding="utf-8") as handle:

        def checkpoint(record):
            handle.write(json.dumps(extraction.record_to_json(record), ensure_ascii=False) + "\n")
            handle.flush()

        result = extraction.run_queries(
            [disease],
            {disease: list(notes)},
            backend,
            style=config.style(),
            exemplars=build_exemplars(config),
            retries=config.retry_budget,
            completed=completed,
            on_record=checkpoint,
            max_in_flight=config.max_in_flight,
        )

    failures_path = out.with_suffix(out.suffix + ".failures.json")
    if result.failures:
        payload = [
            {
                "disease": f.disease,
                "category": f.category.value,
                "question_id": f.question_id,
                "note_id": f.note_id,
                "backend": f.backend,
                "error": f.error,
            }
            for f in result.failures
        ]
        failures_path.write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
        logger.error("%d queries failed permanently; see %s", len(result.failures), failures_path)
    elif failures_path.exists():
        failures_path.unlink()

    result.records = prior_records + result.records
    return result


def relations_to_json(relations: Sequence[Relation]) -> dict:
    return {
        "schema_version": RELATIONS_SCHEMA_VERSION,
        "relations": [
            {
                "disease": r.disease,
                "category": r.category.value,
                "entity": r.entity,
                "entity_key": r.entity_key,
                "avg_score": r.avg_score,
                "count": r.count,
            }
            for r in relations
        ],
    }


def relations_from_json(raw: dict) -> list[Relation]:
    if raw.get("schema_version") != RELATIONS_SCHEMA_VERSION:
        raise StageError(f"unsupported relations schema_version: {raw.get('schema_version')}")
    return [
        Relation(
            disease=r["disease"],
            category=EntityCategory.from_wire(r["category"]),
            entity=r["entity"],
            entity_key=r["entity_key"],
            avg_score=float(r["avg_score"]),
            count=int(r["count"]),
        )
        for r in raw["relations"]
    ]


def stage_postprocess(
    records_path: Path, out: Path, config: PipelineConfig, base_dir: Path | None = None
) -> dict:
    """Records -> final relations: expand, clean, aggregate, group, split."""
    from .postprocess import load_refusals, load_stopwords

    stopwords = load_stopwords(resolve_path(config.stopwords_path, base_dir))
    refusals = load_refusals(resolve_path(config.refusals_path, base_dir))
    records = extraction.load_records(records_path)
    preds = extraction.expand_results(records)
    cleaned = extraction.clean_predictions(
        preds,
        min_score=config.postprocess_min_score,
        stopwords=stopwords,
        refusals=refusals,
    )
    relations = extraction.aggregate_relations(
        cleaned,
        relation_occurrence_number=config.relation_occurrence_number,
        relation_probability=config.relation_probability,
    )
    provider = build_similarity_provider(config)
    refined = extraction.refine_relations(
        relations, provider, sim_threshold=config.grouping_similarity, stopwords=stopwords
    )
    out.write_text(
        json.dumps(relations_to_json(refined), sort_keys=True, indent=2) + "\n", "utf-8"
    )
    return {
        "records": len(records),
        "raw_predictions": len(preds),
        "cleaned_predictions": len(cleaned),
        "aggregated": len(relations),
        "final_relations": len(refined),
    }


def stage_build_kg(relations_path: Path, out: Path, format: str = "json") -> int:
    relations = relations_from_json(json.loads(relations_path.read_text("utf-8")))
    graph = kgraph.build_graph(relations)
    out.write_bytes(kgraph.export(graph, format))
    return len(graph.edges)


def stage_eval(
    kg_path: Path,
    gold_path: Path,
    out: Path,
    config: PipelineConfig,
    records_path: Path | None = None,
) -> dict:
    graph = kgraph.load_graph(kg_path.read_bytes())
    gold = load_gold(gold_path)
    provider = build_similarity_provider(config)
    report = precision_recall(graph, gold, provider, match_threshold=config.match_threshold)
    out.write_bytes(report.to_json())
    out.with_suffix(".md").write_text(report.to_markdown(), "utf-8")
    summary = {"rows": len(report.rows), "uncovered": report.uncovered_diseases}
    if records_path is not None:
        records = extraction.load_records(records_path)
        safety = safety_metrics(records)
        safety_path = out.with_name(out.stem + ".safety.json")
        safety_path.write_bytes(safety.to_json())
        summary["safety_backends"] = sorted(safety.per_backend)
    return summary


def run_pipeline(
    source: Path,
    out_dir: Path,
    disease: str,
    config: PipelineConfig,
    backend_name: str | None = None,
    gold_path: Path | None = None,
    source_format: str = "jsonl",
    resume: bool = False,
    base_dir: Path | None = None,
) -> RunManifest:
    """Chain every stage over a working directory of artifacts.

    Produces the same artifacts as running the stages individually, plus
    run_manifest.json. Returns the manifest; query failures (if any) are in
    the extract stage counts and the failures file.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_digest=config.digest(), backend=backend_name or config.backend)

    ingested = out_dir / "notes.jsonl"
    manifest.stages["ingest"] = {"notes": stage_ingest(source, ingested, source_format)}

    preprocessed = out_dir / "preprocessed.jsonl"
    manifest.stages["preprocess"] = stage_preprocess(ingested, preprocessed, config)

    identified = out_dir / "identified.jsonl"
    manifest.stages["identify"] = stage_identify(
        preprocessed, identified, disease, config, base_dir
    )

    records_path = out_dir / "records.jsonl"
    run = stage_extract(
        identified, records_path, disease, config, backend_name, resume, base_dir
    )
    manifest.stages["extract"] = {
        "records": len(run.records),
        "failures": len(run.failures),
    }

    relations_path = out_dir / "relations.json"
    manifest.stages["postprocess"] = stage_postprocess(
        records_path, relations_path, config, base_dir
    )

    kg_path = out_dir / "kg.json"
    manifest.stages["build_kg"] = {"edges": stage_build_kg(relations_path, kg_path)}

    if gold_path is not None:
        report_path = out_dir / "eval.json"
        manifest.stages["eval"] = stage_eval(
            kg_path, gold_path, report_path, config, records_path
        )

    manifest.write(out_dir / "run_manifest.json")
    return manifest
