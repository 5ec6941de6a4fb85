"""Evaluation harness tests: matching, precision/recall, safety counters."""

import json

import pytest
from conftest import ScriptedSimilarityProvider, answers, make_record

from notekg.evaluation import (
    EvaluationError,
    GoldAnnotation,
    load_gold,
    match_entities,
    precision_recall,
    safety_metrics,
)
from notekg.extraction import Relation
from notekg.gateway import DONT_KNOW, UNSTRUCTURED
from notekg.kgraph import build_graph
from notekg.prompting import EntityCategory
from notekg.similarity import TrigramProvider

EXACT = ScriptedSimilarityProvider({}, default=0.0)


def graph_for(category_values: dict):
    relations = []
    for category, values in category_values.items():
        for value in values:
            relations.append(
                Relation(
                    disease="amd",
                    category=category,
                    entity=value,
                    entity_key=value,
                    avg_score=0.5,
                    count=10,
                )
            )
    return build_graph(relations)


def gold_for(category_values: dict):
    return [
        GoldAnnotation("amd", category, frozenset(values))
        for category, values in category_values.items()
    ]


# ---------------------------------------------------------------------------
# match_entities
# ---------------------------------------------------------------------------


def test_exact_match():
    assert match_entities({"areds vitamins"}, {"areds vitamins"}, EXACT) == {
        ("areds vitamins", "areds vitamins")
    }


def test_dissimilar_pair_no_match():
    # fish vs spinach scores 0.0 under the default provider (frozen oracle value)
    assert match_entities({"fish"}, {"spinach"}, TrigramProvider(), 0.8) == set()


def test_empty_gold_no_match():
    assert match_entities({"a"}, set(), EXACT) == set()


def test_fuzzy_match_above_threshold():
    sim = ScriptedSimilarityProvider({("areds vitamin", "areds vitamins"): 0.9})
    matches = match_entities({"areds vitamin"}, {"areds vitamins"}, sim, 0.8)
    assert matches == {("areds vitamin", "areds vitamins")}


def test_matching_is_one_to_one():
    sim = ScriptedSimilarityProvider(
        {("p1", "g1"): 0.95, ("p2", "g1"): 0.9, ("p2", "g2"): 0.85}
    )
    matches = match_entities({"p1", "p2"}, {"g1", "g2"}, sim, 0.8)
    assert matches == {("p1", "g1"), ("p2", "g2")}
    assert len(matches) <= min(2, 2)


def test_raising_threshold_never_adds_matches():
    sim = ScriptedSimilarityProvider({("p", "g"): 0.85})
    low = match_entities({"p"}, {"g"}, sim, 0.8)
    high = match_entities({"p"}, {"g"}, sim, 0.9)
    assert high <= low


# ---------------------------------------------------------------------------
# precision_recall
# ---------------------------------------------------------------------------


def test_set_arithmetic():
    kg = graph_for({EntityCategory.TREATMENT: ["a", "b", "c"]})
    gold = gold_for({EntityCategory.TREATMENT: ["a", "b", "d"]})
    report = precision_recall(kg, gold, EXACT)
    row = report.rows[0]
    assert row.precision == pytest.approx(2 / 3)
    assert row.recall == pytest.approx(2 / 3)
    assert (row.matched, row.predicted, row.gold) == (2, 3, 3)


def test_perfect_prediction():
    values = {EntityCategory.FACTOR: ["smoking", "genetics"]}
    report = precision_recall(graph_for(values), gold_for(values), EXACT)
    assert report.rows[0].precision == 1.0
    assert report.rows[0].recall == 1.0


def test_empty_prediction_flagged():
    kg = build_graph([])
    gold = gold_for({EntityCategory.TREATMENT: ["a"]})
    report = precision_recall(kg, gold, EXACT)
    # the graph has no disease node, so amd is simply gold-only
    row = report.rows[0]
    assert row.precision == 0.0
    assert row.recall == 0.0
    assert row.empty_predicted


def test_uncovered_disease_reported_not_scored():
    kg = graph_for({EntityCategory.TREATMENT: ["a"]})
    report = precision_recall(kg, [], EXACT)
    assert report.uncovered_diseases == ["amd"]
    assert report.rows == []


def test_predicted_entities_are_normalized_before_matching():
    kg = graph_for({EntityCategory.TREATMENT: ["AREDS + WACS vitamins."]})
    gold = [GoldAnnotation("amd", EntityCategory.TREATMENT, frozenset({"areds wacs vitamins"}))]
    report = precision_recall(kg, gold, EXACT)
    assert report.rows[0].precision == 1.0


def test_report_bytes_reproducible():
    kg = graph_for({EntityCategory.TREATMENT: ["a", "b"]})
    gold = gold_for({EntityCategory.TREATMENT: ["a"]})
    r1 = precision_recall(kg, gold, EXACT)
    r2 = precision_recall(kg, gold, EXACT)
    assert r1.to_json() == r2.to_json()


def test_markdown_report_shape():
    values = {EntityCategory.TREATMENT: ["a"], EntityCategory.FACTOR: ["b"]}
    report = precision_recall(graph_for(values), gold_for(values), EXACT)
    md = report.to_markdown()
    lines = md.splitlines()
    assert lines[0].startswith("| Disease |")
    assert "treatment P" in lines[0] and "coexists_with R" in lines[0]
    assert lines[2].startswith("| amd |")


def test_gold_annotation_must_be_non_empty():
    with pytest.raises(EvaluationError):
        GoldAnnotation("amd", EntityCategory.FACTOR, frozenset())


def test_load_gold(tmp_path):
    path = tmp_path / "gold.json"
    path.write_text(
        json.dumps(
            [{"disease": "amd", "category": "treatment", "values": ["areds vitamins"]}]
        )
    )
    gold = load_gold(path)
    assert gold[0].category is EntityCategory.TREATMENT
    assert gold[0].values == {"areds vitamins"}


# ---------------------------------------------------------------------------
# safety_metrics
# ---------------------------------------------------------------------------


def test_unstructured_rate():
    records = [make_record(answers(("a", 0.5))) for _ in range(7)]
    records += [make_record(UNSTRUCTURED, raw=f"junk {i}") for i in range(3)]
    report = safety_metrics(records)
    stats = report.per_backend["test-backend"]
    assert stats.total_queries == 10
    assert stats.unstructured_rate == pytest.approx(0.3)
    assert abs(stats.unstructured_rate * stats.total_queries - stats.unstructured) < 0.5


def test_all_dontknow():
    records = [make_record(DONT_KNOW, raw="I do not know.") for _ in range(4)]
    report = safety_metrics(records)
    assert report.per_backend["test-backend"].dontknow_rate == 1.0


def test_empty_records_error():
    with pytest.raises(EvaluationError):
        safety_metrics([])


def test_examples_capped_at_ten():
    records = [make_record(UNSTRUCTURED, raw=f"junk {i}") for i in range(25)]
    stats = safety_metrics(records).per_backend["test-backend"]
    assert len(stats.unstructured_examples) == 10
    assert stats.unstructured == 25


def test_per_backend_split():
    records = [
        make_record(DONT_KNOW, backend="alpha"),
        make_record(UNSTRUCTURED, backend="beta"),
        make_record(answers(("x", 0.5)), backend="beta"),
    ]
    report = safety_metrics(records)
    assert report.per_backend["alpha"].dontknow == 1
    assert report.per_backend["beta"].unstructured == 1
    assert report.per_backend["beta"].total_queries == 2
