"""Query loop, prediction expansion, and relation aggregation.

run_queries drives the disease x category x question x note loop against a
backend; expand_results flattens parsed answers into raw predictions;
aggregate_relations groups them by (entity, disease, category), thresholds on
occurrence count and mean score, and argmax-selects one category per
(disease, entity) pair. refine_relations then applies similarity grouping and
span splitting per (disease, category) to produce the final relation set.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import postprocess
from .corpus import ClinicalNote
from .gateway import (
    Answer,
    Answers,
    BackendExhaustedError,
    ModelBackend,
    Parsed,
    QueryRecord,
    prompt_digest,
    query,
)
from .gateway import DEFAULT_GENERATIVE_SCORE, DEFAULT_RETRIES, DONT_KNOW, UNSTRUCTURED
from .prompting import (
    CATEGORY_ORDER,
    EntityCategory,
    Exemplar,
    PromptStyle,
    QuestionTemplate,
    TEMPLATES,
    build_prompt,
    instantiate_questions,
)

logger = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1

DEFAULT_OCCURRENCE_THRESHOLD = 10
DEFAULT_PROBABILITY_THRESHOLD = 0.1


@dataclass(frozen=True)
class RawPrediction:
    """One (answer x query) element after expansion.

    ``entity_text`` holds the normalized form used as the aggregation key;
    ``surface`` keeps the answer as the model produced it.
    """

    entity_text: str
    surface: str
    score: float
    disease: str
    category: EntityCategory
    note_id: str
    question_id: str


@dataclass(frozen=True)
class RelationCandidate:
    """Aggregated statistics for one (entity, disease, category) group."""

    entity: str
    surface: str
    disease: str
    category: EntityCategory
    avg_score: float
    count: int


@dataclass(frozen=True)
class Relation:
    """A typed disease -> entity edge selected by the category argmax."""

    disease: str
    category: EntityCategory
    entity: str
    entity_key: str
    avg_score: float
    count: int


@dataclass(frozen=True)
class QueryFailure:
    disease: str
    category: EntityCategory
    question_id: str
    note_id: str
    backend: str
    error: str


@dataclass
class RunResult:
    """Query records plus an explicit manifest of permanently failed calls."""

    records: list[QueryRecord] = field(default_factory=list)
    failures: list[QueryFailure] = field(default_factory=list)


def query_key(disease: str, category: EntityCategory, question_id: str, note_id: str) -> str:
    return f"{disease}|{category.value}|{question_id}|{note_id}"


def run_queries(
    diseases: Sequence[str],
    note_index: Mapping[str, Sequence[ClinicalNote]],
    backend: ModelBackend,
    style: PromptStyle = PromptStyle.GUIDED,
    templates: tuple[QuestionTemplate, ...] = TEMPLATES,
    exemplars: tuple[Exemplar, ...] = (),
    retries: int = DEFAULT_RETRIES,
    default_score: float = DEFAULT_GENERATIVE_SCORE,
    completed: set[str] | None = None,
    on_record: Callable[[QueryRecord], None] | None = None,
    max_in_flight: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> RunResult:
    """Run the full query loop: every disease, category, question, and note.

    Each disease issues len(notes) x 3 x 5 queries (with the built-in
    templates). Transport-exhausted calls are logged into the failure
    manifest instead of being lost; ``completed`` keys (see query_key) are
    skipped so interrupted runs can resume; ``on_record`` fires after every
    successful record for checkpointing.

    With ``max_in_flight`` > 1 queries run on a thread pool; the returned
    records are always in loop order, but ``on_record`` fires in completion
    order (downstream stages are permutation-invariant, so artifacts built
    from the checkpoint do not depend on it).
    """
    completed = completed or set()
    tasks: list[tuple[str, EntityCategory, str, str, ClinicalNote]] = []
    for disease in diseases:
        notes = note_index.get(disease, ())
        for category in CATEGORY_ORDER:
            for question_id, question in instantiate_questions(disease, category, templates):
                for note in notes:
                    if query_key(disease, category, question_id, note.id) in completed:
                        continue
                    tasks.append((disease, category, question_id, question, note))

    def execute(task):
        disease, category, question_id, question, note = task
        prompt = build_prompt(
            style,
            question,
            note.text,
            category,
            exemplars=exemplars,
            note_id=note.id,
            question_id=question_id,
        )
        try:
            record = query(
                backend,
                prompt,
                disease=disease,
                retries=retries,
                default_score=default_score,
                sleep=sleep,
            )
        except BackendExhaustedError as exc:
            logger.error("query failed permanently: %s", exc)
            return None, QueryFailure(
                disease=disease,
                category=category,
                question_id=question_id,
                note_id=note.id,
                backend=backend.name,
                error=str(exc),
            )
        return record, None

    result = RunResult()
    if max_in_flight <= 1:
        for task in tasks:
            record, failure = execute(task)
            if failure is not None:
                result.failures.append(failure)
                continue
            result.records.append(record)
            if on_record is not None:
                on_record(record)
        return result

    from concurrent.futures import ThreadPoolExecutor, as_completed

    checkpoint_lock = threading.Lock()
    outcomes: dict[int, tuple] = {}
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = {pool.submit(execute, task): i for i, task in enumerate(tasks)}
        for future in as_completed(futures):
            record, failure = future.result()
            outcomes[futures[future]] = (record, failure)
            if record is not None and on_record is not None:
                with checkpoint_lock:
                    on_record(record)
    for i in range(len(tasks)):
        record, failure = outcomes[i]
        if failure is not None:
            result.failures.append(failure)
        else:
            result.records.append(record)
    return result


def expand_results(records: Iterable[QueryRecord]) -> list[RawPrediction]:
    """Flatten records: an Answers record with k answers yields k predictions.

    DontKnow and Unstructured records yield none; safety_metrics counts them.
    """
    preds: list[RawPrediction] = []
    for record in records:
        if not isinstance(record.parsed, Answers):
            continue
        for answer in record.parsed.answers:
            preds.append(
                RawPrediction(
                    entity_text=answer.text,
                    surface=answer.text,
                    score=answer.score,
                    disease=record.disease,
                    category=record.category,
                    note_id=record.note_id,
                    question_id=record.question_id,
                )
            )
    return preds


def clean_predictions(
    preds: Iterable[RawPrediction],
    min_score: float = postprocess.DEFAULT_MIN_SCORE,
    stopwords: frozenset[str] | None = None,
    refusals: frozenset[str] | None = None,
) -> list[RawPrediction]:
    """Apply the early cleanup steps before aggregation.

    Scores below ``min_score`` go, refusal texts go, and the surviving
    predictions get their normalized entity_text (predictions normalizing to
    nothing are dropped too).
    """
    kept = postprocess.filter_low_score(preds, min_score)
    kept = postprocess.drop_refusals(kept, refusals)
    out: list[RawPrediction] = []
    for pred in kept:
        normalized = postprocess.normalize(pred.surface, stopwords)
        if not normalized:
            continue
        out.append(replace(pred, entity_text=normalized))
    return out


def _category_index(category: EntityCategory) -> int:
    return CATEGORY_ORDER.index(category)


def _best_surface(members: list[tuple[str, float]]) -> str:
    # Same tie chain as group representatives: score, longer text, lexicographic.
    return min(members, key=lambda m: (-m[1], -len(m[0]), m[0]))[0]


def aggregate_relations(
    preds: Iterable[RawPrediction],
    relation_occurrence_number: int = DEFAULT_OCCURRENCE_THRESHOLD,
    relation_probability: float = DEFAULT_PROBABILITY_THRESHOLD,
) -> list[Relation]:
    """Aggregate predictions into at most one typed relation per (disease, entity).

    Groups by (entity_text, disease, category); keeps candidates whose
    occurrence count and fsum-based mean score meet the thresholds
    (inclusive); then picks, per (disease, entity), the surviving category
    with the highest mean (ties: higher count, then category order). The
    result is invariant under any permutation of ``preds``.
    """
    if relation_occurrence_number < 0 or relation_probability < 0:
        raise ValueError("aggregation thresholds must be nonnegative")

    groups: dict[tuple[str, str, EntityCategory], list[tuple[str, float]]] = {}
    for pred in preds:
        key = (pred.entity_text, pred.disease, pred.category)
        groups.setdefault(key, []).append((pred.surface, pred.score))

    surviving: dict[tuple[str, str], list[RelationCandidate]] = {}
    for (entity, disease, category), members in groups.items():
        count = len(members)
        avg = math.fsum(score for _, score in members) / count
        if count >= relation_occurrence_number and avg >= relation_probability:
            surviving.setdefault((disease, entity), []).append(
                RelationCandidate(
                    entity=entity,
                    surface=_best_surface(members),
                    disease=disease,
                    category=category,
                    avg_score=avg,
                    count=count,
                )
            )

    relations = []
    for (disease, entity), candidates in surviving.items():
        best = max(
            candidates,
            key=lambda c: (c.avg_score, c.count, -_category_index(c.category)),
        )
        relations.append(
            Relation(
                disease=disease,
                category=best.category,
                entity=best.surface,
                entity_key=best.entity,
                avg_score=best.avg_score,
                count=best.count,
            )
        )
    relations.sort(key=lambda r: (r.disease, r.entity_key))
    return relations


def refine_relations(
    relations: Sequence[Relation],
    sim,
    sim_threshold: float = postprocess.DEFAULT_GROUP_THRESHOLD,
    stopwords: frozenset[str] | None = None,
) -> list[Relation]:
    """Late cleanup per (disease, category): similarity grouping + span splitting.

    Near-equivalent surviving relations collapse into their highest-scored
    representative, whose surface form is then split into individual entity
    values. Splitting can recreate (disease, entity) collisions across
    categories, so the aggregation argmax tie chain is applied once more.
    """
    by_partition: dict[tuple[str, EntityCategory], list[Relation]] = {}
    for rel in relations:
        by_partition.setdefault((rel.disease, rel.category), []).append(rel)

    refined: dict[tuple[str, str], Relation] = {}
    for (disease, category), rels in sorted(
        by_partition.items(), key=lambda kv: (kv[0][0], _category_index(kv[0][1]))
    ):
        preds = [
            postprocess.Prediction(
                text=rel.entity_key, score=rel.avg_score, surface=rel.entity, payload=rel
            )
            for rel in rels
        ]
        for group in postprocess.group_similar(preds, sim, sim_threshold):
            rep = group.representative
            source: Relation = rep.payload
            for value, score in postprocess.split_spans(rep):
                key = postprocess.normalize(value, stopwords)
                if not key:
                    continue
                candidate = Relation(
                    disease=disease,
                    category=category,
                    entity=value,
                    entity_key=key,
                    avg_score=score,
                    count=source.count,
                )
                existing = refined.get((disease, key))
                if existing is None or _beats(candidate, existing):
                    refined[(disease, key)] = candidate
    return sorted(refined.values(), key=lambda r: (r.disease, r.entity_key))


def _beats(a: Relation, b: Relation) -> bool:
    return (a.avg_score, a.count, -_category_index(a.category)) > (
        b.avg_score,
        b.count,
        -_category_index(b.category),
    )


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def _parsed_to_json(parsed: Parsed) -> dict:
    if isinstance(parsed, Answers):
        return {
            "kind": "answers",
            "answers": [{"text": a.text, "score": a.score} for a in parsed.answers],
        }
    return {"kind": parsed.kind}


def _parsed_from_json(data: dict) -> Parsed:
    kind = data["kind"]
    if kind == "answers":
        return Answers(tuple(Answer(a["text"], a["score"]) for a in data["answers"]))
    if kind == "dont_know":
        return DONT_KNOW
    if kind == "unstructured":
        return UNSTRUCTURED
    raise ValueError(f"unknown parsed kind: {kind}")


def record_to_json(record: QueryRecord) -> dict:
    """Checkpoint form of a record. The raw response is kept byte-exact;
    the prompt itself is summarized by its digest."""
    return {
        "schema_version": RECORD_SCHEMA_VERSION,
        "disease": record.disease,
        "category": record.category.value,
        "question_id": record.question_id,
        "note_id": record.note_id,
        "backend": record.backend,
        "prompt_sha256": prompt_digest(record.prompt.text) if record.prompt else None,
        "raw_response": record.raw_response,
        "parsed": _parsed_to_json(record.parsed),
        "latency": record.latency,
    }


def record_from_json(data: dict) -> QueryRecord:
    version = data.get("schema_version")
    if version != RECORD_SCHEMA_VERSION:
        raise ValueError(f"unsupported record schema_version: {version}")
    return QueryRecord(
        prompt=None,
        backend=data["backend"],
        raw_response=data["raw_response"],
        parsed=_parsed_from_json(data["parsed"]),
        latency=float(data["latency"]),
        disease=data["disease"],
        category=EntityCategory.from_wire(data["category"]),
        note_id=data["note_id"],
        question_id=data["question_id"],
    )


def save_records(records: Iterable[QueryRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record_to_json(record), ensure_ascii=False) + "\n")


def load_records(path: str | Path) -> list[QueryRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(record_from_json(json.loads(line)))
    return records


def completed_keys(records: Iterable[QueryRecord]) -> set[str]:
    return {
        query_key(r.disease, r.category, r.question_id, r.note_id) for r in records
    }
