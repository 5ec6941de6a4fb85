"""Scoring constructed graphs against gold annotations, plus safety counters.

Precision/recall is computed per (disease, category) with a greedy one-to-one
entity matcher (exact normalized equality first, then best-similarity pairs
above a threshold). Safety metrics count how often each backend produced
unstructured output or refused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import DontKnow, QueryRecord, Unstructured
from .kgraph import KnowledgeGraph
from .postprocess import DEFAULT_GROUP_THRESHOLD, normalize
from .prompting import CATEGORY_ORDER, EntityCategory

DEFAULT_MATCH_THRESHOLD = DEFAULT_GROUP_THRESHOLD

MAX_EXAMPLES_PER_CLASS = 10


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class GoldAnnotation:
    """Gold entity values for one (disease, category)."""

    disease: str
    category: EntityCategory
    values: frozenset[str]

    def __post_init__(self):
        if not self.values:
            raise EvaluationError(
                f"gold annotation for ({self.disease}, {self.category.value}) is empty"
            )


def load_gold(path: str | Path) -> list[GoldAnnotation]:
    """Gold file: JSON list of {"disease", "category", "values": [...]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        GoldAnnotation(
            disease=entry["disease"],
            category=EntityCategory.from_wire(entry["category"]),
            values=frozenset(entry["values"]),
        )
        for entry in raw
    ]


def match_entities(
    predicted: Iterable[str],
    gold: Iterable[str],
    sim,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> set[tuple[str, str]]:
    """Greedy best-first one-to-one matching of predicted to gold entities.

    Exact equality pairs first; remaining pairs are taken in order of
    descending similarity while above ``match_threshold``. Each side is used
    at most once. Inputs are expected normalized.
    """
    predicted = sorted(set(predicted))
    gold = sorted(set(gold))
    matches: set[tuple[str, str]] = set()
    used_pred: set[str] = set()
    used_gold: set[str] = set()

    for p in predicted:
        if p in gold:
            matches.add((p, p))
            used_pred.add(p)
            used_gold.add(p)

    candidates = []
    for p in predicted:
        if p in used_pred:
            continue
        for g in gold:
            if g in used_gold:
                continue
            score = sim.similarity(p, g)
            if score > match_threshold:
                candidates.append((score, p, g))
    # Descending similarity; ties resolved lexicographically for determinism.
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    for score, p, g in candidates:
        if p in used_pred or g in used_gold:
            continue
        matches.add((p, g))
        used_pred.add(p)
        used_gold.add(g)
    return matches


@dataclass(frozen=True)
class CategoryMetrics:
    disease: str
    category: EntityCategory
    precision: float
    recall: float
    matched: int
    predicted: int
    gold: int
    empty_predicted: bool = False
    empty_gold: bool = False


@dataclass
class MetricsReport:
    rows: list[CategoryMetrics] = field(default_factory=list)
    uncovered_diseases: list[str] = field(default_factory=list)

    def to_json(self) -> bytes:
        payload = {
            "rows": [
                {
                    "disease": r.disease,
                    "category": r.category.value,
                    "precision": r.precision,
                    "recall": r.recall,
                    "matched": r.matched,
                    "predicted": r.predicted,
                    "gold": r.gold,
                    "empty_predicted": r.empty_predicted,
                    "empty_gold": r.empty_gold,
                }
                for r in self.rows
            ],
            "uncovered_diseases": self.uncovered_diseases,
        }
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")

    def to_markdown(self) -> str:
        """Markdown table with a precision/recall column pair per category."""
        header = "| Disease |"
        rule = "| --- |"
        for category in CATEGORY_ORDER:
            header += f" {category.value} P | {category.value} R |"
            rule += " --- | --- |"
        lines = [header, rule]
        by_disease: dict[str, dict[EntityCategory, CategoryMetrics]] = {}
        for row in self.rows:
            by_disease.setdefault(row.disease, {})[row.category] = row
        for disease in sorted(by_disease):
            cells = [disease]
            for category in CATEGORY_ORDER:
                row = by_disease[disease].get(category)
                if row is None:
                    cells.extend(["-", "-"])
                else:
                    cells.extend([f"{row.precision:.3f}", f"{row.recall:.3f}"])
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def precision_recall(
    kg: KnowledgeGraph,
    gold: Sequence[GoldAnnotation],
    sim,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> MetricsReport:
    """Per-(disease, category) precision and recall of the graph against gold.

    Predicted and gold entity sets are normalized before matching. Diseases
    present in the graph but absent from the gold file are reported as
    uncovered rather than scored.
    """
    predicted: dict[tuple[str, EntityCategory], set[str]] = {}
    kg_diseases = kg.node_labels("disease")
    for edge in kg.edges:
        key = (edge.source, edge.category)
        predicted.setdefault(key, set()).add(normalize(edge.target))

    gold_index: dict[tuple[str, EntityCategory], set[str]] = {}
    gold_diseases = set()
    for ann in gold:
        gold_diseases.add(ann.disease)
        gold_index.setdefault((ann.disease, ann.category), set()).update(
            normalize(v) for v in ann.values
        )

    report = MetricsReport(
        uncovered_diseases=sorted(kg_diseases - gold_diseases)
    )
    keys = set(predicted) | set(gold_index)
    for disease, category in sorted(keys, key=lambda k: (k[0], k[1].value)):
        if disease not in gold_diseases:
            continue
        pred_set = predicted.get((disease, category), set())
        gold_set = gold_index.get((disease, category), set())
        matches = match_entities(pred_set, gold_set, sim, match_threshold)
        matched = len(matches)
        if pred_set:
            precision = matched / len(pred_set)
        else:
            precision = 1.0 if not gold_set else 0.0
        recall = matched / len(gold_set) if gold_set else 1.0
        report.rows.append(
            CategoryMetrics(
                disease=disease,
                category=category,
                precision=precision,
                recall=recall,
                matched=matched,
                predicted=len(pred_set),
                gold=len(gold_set),
                empty_predicted=not pred_set,
                empty_gold=not gold_set,
            )
        )
    return report


@dataclass
class BackendSafety:
    total_queries: int
    unstructured: int
    dontknow: int
    unstructured_examples: list[str] = field(default_factory=list)
    dontknow_examples: list[str] = field(default_factory=list)

    @property
    def unstructured_rate(self) -> float:
        return self.unstructured / self.total_queries

    @property
    def dontknow_rate(self) -> float:
        return self.dontknow / self.total_queries


@dataclass
class SafetyReport:
    per_backend: dict[str, BackendSafety] = field(default_factory=dict)

    def to_json(self) -> bytes:
        payload = {
            name: {
                "total_queries": s.total_queries,
                "unstructured": s.unstructured,
                "dontknow": s.dontknow,
                "unstructured_rate": s.unstructured_rate,
                "dontknow_rate": s.dontknow_rate,
                "unstructured_examples": s.unstructured_examples,
                "dontknow_examples": s.dontknow_examples,
            }
            for name, s in sorted(self.per_backend.items())
        }
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def safety_metrics(records: Sequence[QueryRecord]) -> SafetyReport:
    """Count unstructured and refusal responses per backend.

    Keeps up to ten example raw responses per failure class. Empty input is
    an error: there is nothing to report on.
    """
    if not records:
        raise EvaluationError("cannot compute safety metrics from zero records")
    report = SafetyReport()
    for record in records:
        stats = report.per_backend.setdefault(
            record.backend, BackendSafety(total_queries=0, unstructured=0, dontknow=0)
        )
        stats.total_queries += 1
        if isinstance(record.parsed, Unstructured):
            stats.unstructured += 1
            if len(stats.unstructured_examples) < MAX_EXAMPLES_PER_CLASS:
                stats.unstructured_examples.append(record.raw_response)
        elif isinstance(record.parsed, DontKnow):
            stats.dontknow += 1
            if len(stats.dontknow_examples) < MAX_EXAMPLES_PER_CLASS:
                stats.dontknow_examples.append(record.raw_response)
    return report
