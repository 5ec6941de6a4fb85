"""Query loop, expansion, aggregation, and refinement tests."""

import math
import random

import pytest
from conftest import ScriptedSimilarityProvider, answers, make_record
from hypothesis import given, settings
from hypothesis import strategies as st

from notekg.corpus import ClinicalNote
from notekg.extraction import (
    RawPrediction,
    Relation,
    aggregate_relations,
    clean_predictions,
    completed_keys,
    expand_results,
    load_records,
    record_from_json,
    record_to_json,
    refine_relations,
    run_queries,
    save_records,
)
from notekg.gateway import (
    Answers,
    BackendKind,
    DONT_KNOW,
    ScriptedBackend,
    UNSTRUCTURED,
)
from notekg.prompting import CATEGORY_ORDER, EntityCategory, PromptStyle
from oracles import naive_aggregate

CAT_INDEX = {c: i for i, c in enumerate(CATEGORY_ORDER)}


def pred(
    entity,
    score,
    disease="amd",
    category=EntityCategory.TREATMENT,
    surface=None,
    note_id="n1",
    question_id="T1",
):
    return RawPrediction(
        entity_text=entity,
        surface=surface or entity,
        score=score,
        disease=disease,
        category=category,
        note_id=note_id,
        question_id=question_id,
    )


def notes(n):
    return [ClinicalNote(f"n{i}", f"note {i} mentions armd and more words") for i in range(n)]


def default_backend():
    return ScriptedBackend(
        "fix", BackendKind.GENERATIVE, {"default": {"text": "I do not know."}}
    )


# ---------------------------------------------------------------------------
# run_queries
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [0, 1, 2, 7])
def test_query_loop_arithmetic(n):
    result = run_queries(
        ["amd"], {"amd": notes(n)}, default_backend(), style=PromptStyle.GUIDED
    )
    assert len(result.records) == n * 3 * 5
    assert not result.failures


def test_records_fully_tagged():
    result = run_queries(["amd"], {"amd": notes(2)}, default_backend())
    seen = {(r.disease, r.category, r.question_id, r.note_id) for r in result.records}
    assert len(seen) == 30
    assert all(r.disease == "amd" for r in result.records)
    categories = {r.category for r in result.records}
    assert categories == set(CATEGORY_ORDER)


def test_empty_note_index_yields_nothing():
    result = run_queries(["amd"], {}, default_backend())
    assert result.records == [] and result.failures == []


def test_permanent_failure_goes_to_manifest():
    script = {
        "by_key": {"T1|n0": {"error": "timeout"}},
        "default": {"text": "I do not know."},
    }
    backend = ScriptedBackend("flaky", BackendKind.GENERATIVE, script)
    result = run_queries(
        ["amd"], {"amd": notes(2)}, backend, retries=3, sleep=lambda _: None
    )
    assert len(result.records) == 29
    assert len(result.failures) == 1
    failure = result.failures[0]
    assert (failure.question_id, failure.note_id) == ("T1", "n0")
    assert failure.backend == "flaky"


def test_completed_keys_are_skipped():
    first = run_queries(["amd"], {"amd": notes(2)}, default_backend())
    done = completed_keys(first.records)
    resumed = run_queries(["amd"], {"amd": notes(2)}, default_backend(), completed=done)
    assert resumed.records == []


# ---------------------------------------------------------------------------
# expand_results / clean_predictions
# ---------------------------------------------------------------------------


def test_expand_two_answers_two_predictions():
    record = make_record(answers(("a", 0.5), ("b", 0.6)))
    preds = expand_results([record])
    assert [(p.entity_text, p.score) for p in preds] == [("a", 0.5), ("b", 0.6)]
    assert all(p.disease == "amd" and p.category is EntityCategory.TREATMENT for p in preds)


def test_expand_skips_dontknow_and_unstructured():
    records = [make_record(DONT_KNOW), make_record(UNSTRUCTURED)]
    assert expand_results(records) == []


def test_clean_predictions_normalizes_and_filters():
    preds = [
        pred("AREDS + WACS vitamins.", 0.5),
        pred("new clinical trial", 0.01),
        pred("I do not know.", 0.9),
        pred("...", 0.9),
    ]
    cleaned = clean_predictions(preds, min_score=0.08)
    assert len(cleaned) == 1
    assert cleaned[0].entity_text == "areds wacs vitamins"
    assert cleaned[0].surface == "AREDS + WACS vitamins."


# ---------------------------------------------------------------------------
# aggregate_relations
# ---------------------------------------------------------------------------


def test_count_below_threshold_dropped():
    preds = [pred("e", 0.9, question_id=f"T{i}") for i in range(9)]
    assert aggregate_relations(preds, 10, 0.1) == []


def test_boundary_count_and_average_kept():
    preds = [pred("e", 0.1, note_id=f"n{i}") for i in range(10)]
    relations = aggregate_relations(preds, 10, 0.1)
    assert len(relations) == 1
    assert relations[0].count == 10
    assert relations[0].avg_score == 0.1  # fsum([0.1]*10)/10 is exactly 0.1


def test_argmax_category_selection():
    preds = [pred("e", 0.3, category=EntityCategory.TREATMENT, note_id=f"a{i}") for i in range(12)]
    preds += [pred("e", 0.5, category=EntityCategory.FACTOR, note_id=f"b{i}") for i in range(11)]
    relations = aggregate_relations(preds, 10, 0.1)
    assert len(relations) == 1
    rel = relations[0]
    assert rel.category is EntityCategory.FACTOR
    assert rel.count == 11
    assert rel.avg_score == pytest.approx(0.5)
    # cross-checked against the exhaustive grouping oracle
    oracle = naive_aggregate(
        [(p.entity_text, p.disease, CAT_INDEX[p.category], p.score) for p in preds], 10, 0.1
    )
    assert [(d, c, e) for d, c, e, _, _ in oracle] == [("amd", 1, "e")]


def test_argmax_tie_breaks_on_count_then_category_order():
    preds = [pred("e", 0.5, category=EntityCategory.FACTOR, note_id=f"a{i}") for i in range(11)]
    preds += [
        pred("e", 0.5, category=EntityCategory.COEXISTS_WITH, note_id=f"b{i}") for i in range(10)
    ]
    rel = aggregate_relations(preds, 10, 0.1)[0]
    assert rel.category is EntityCategory.FACTOR  # higher count wins

    preds = [pred("e", 0.5, category=EntityCategory.FACTOR, note_id=f"a{i}") for i in range(10)]
    preds += [
        pred("e", 0.5, category=EntityCategory.COEXISTS_WITH, note_id=f"b{i}") for i in range(10)
    ]
    rel = aggregate_relations(preds, 10, 0.1)[0]
    assert rel.category is EntityCategory.FACTOR  # then fixed category order


def test_uniqueness_per_disease_entity():
    preds = []
    for cat in CATEGORY_ORDER:
        preds += [pred("e", 0.5, category=cat, note_id=f"{cat.value}{i}") for i in range(10)]
    relations = aggregate_relations(preds, 10, 0.1)
    assert len(relations) == 1


def _random_predictions(rng, size):
    entities = ["areds", "fish", "drusen", "smoking", "vitamins", "grid"]
    diseases = ["amd", "glaucoma"]
    scores = [0.05, 0.08, 0.1, 0.2, 0.3, 0.5, 0.9, 1.0]
    return [
        pred(
            rng.choice(entities),
            rng.choice(scores),
            disease=rng.choice(diseases),
            category=rng.choice(CATEGORY_ORDER),
            note_id=f"n{i}",
        )
        for i in range(size)
    ]


def test_oracle_equivalence_on_random_fixtures():
    rng = random.Random(1234)
    for trial in range(200):
        preds = _random_predictions(rng, rng.randint(0, 200))
        # force the documented boundary shapes into some trials
        if trial % 7 == 0:
            preds += [pred("boundary", 0.1, note_id=f"x{i}") for i in range(10)]
        got = aggregate_relations(preds, 10, 0.1)
        want = naive_aggregate(
            [(p.entity_text, p.disease, CAT_INDEX[p.category], p.score) for p in preds],
            10,
            0.1,
        )
        assert sorted(
            (r.disease, CAT_INDEX[r.category], r.entity_key, r.avg_score, r.count)
            for r in got
        ) == want


@settings(max_examples=50, deadline=None)
@given(
    data=st.lists(
        st.tuples(
            st.sampled_from(["a", "b", "c"]),
            st.sampled_from([0.05, 0.1, 0.45, 0.95]),
            st.sampled_from(list(CATEGORY_ORDER)),
        ),
        max_size=60,
    ),
    seed=st.integers(min_value=0, max_value=999),
)
def test_aggregation_permutation_invariance(data, seed):
    preds = [
        pred(e, s, category=c, note_id=f"n{i}") for i, (e, s, c) in enumerate(data)
    ]
    shuffled = preds[:]
    random.Random(seed).shuffle(shuffled)
    assert aggregate_relations(preds, 2, 0.1) == aggregate_relations(shuffled, 2, 0.1)


def test_threshold_monotonicity():
    rng = random.Random(7)
    preds = _random_predictions(rng, 150)
    base = {(r.disease, r.entity_key) for r in aggregate_relations(preds, 5, 0.1)}
    higher_count = {(r.disease, r.entity_key) for r in aggregate_relations(preds, 6, 0.1)}
    higher_prob = {(r.disease, r.entity_key) for r in aggregate_relations(preds, 5, 0.2)}
    assert higher_count <= base
    assert higher_prob <= base


def test_candidate_average_is_exact_mean():
    scores = [0.123, 0.456, 0.789]
    preds = [pred("e", s, note_id=f"n{i}") for i, s in enumerate(scores)]
    rel = aggregate_relations(preds, 3, 0.0)[0]
    assert rel.avg_score == pytest.approx(math.fsum(scores) / 3, abs=1e-9)


# ---------------------------------------------------------------------------
# refine_relations
# ---------------------------------------------------------------------------


def relation(entity_key, surface, category, avg, count, disease="amd"):
    return Relation(
        disease=disease,
        category=category,
        entity=surface,
        entity_key=entity_key,
        avg_score=avg,
        count=count,
    )


def test_refine_merges_similar_relations():
    rels = [
        relation("areds vitamins", "areds vitamins", EntityCategory.TREATMENT, 0.45, 12),
        relation("areds vitamin", "areds vitamin", EntityCategory.TREATMENT, 0.3, 10),
    ]
    provider = ScriptedSimilarityProvider({("areds vitamins", "areds vitamin"): 0.9})
    refined = refine_relations(rels, provider, 0.8)
    assert len(refined) == 1
    assert refined[0].entity == "areds vitamins"
    assert refined[0].count == 12


def test_refine_splits_representative_surface():
    rels = [
        relation(
            "areds vitamins fish spinach",
            "areds vitamins, fish, spinach",
            EntityCategory.TREATMENT,
            0.67,
            11,
        )
    ]
    refined = refine_relations(rels, ScriptedSimilarityProvider({}), 0.8)
    assert {(r.entity, r.avg_score, r.count) for r in refined} == {
        ("areds vitamins", 0.67, 11),
        ("fish", 0.67, 11),
        ("spinach", 0.67, 11),
    }


def test_refine_resolves_cross_category_collisions():
    rels = [
        relation("spinach fish", "spinach and fish", EntityCategory.TREATMENT, 0.4, 10),
        relation("fish", "fish", EntityCategory.COEXISTS_WITH, 0.6, 10),
    ]
    refined = refine_relations(rels, ScriptedSimilarityProvider({}), 0.8)
    by_key = {r.entity_key: r for r in refined}
    assert by_key["fish"].category is EntityCategory.COEXISTS_WITH  # 0.6 beats 0.4
    assert by_key["spinach"].category is EntityCategory.TREATMENT


# ---------------------------------------------------------------------------
# checkpoint round trip
# ---------------------------------------------------------------------------


def test_record_json_round_trip(tmp_path):
    records = [
        make_record(answers(("Avastin", 0.5)), raw="treat: Avastin"),
        make_record(DONT_KNOW, raw="I do not know."),
        make_record(UNSTRUCTURED, raw="garbage"),
    ]
    path = tmp_path / "records.jsonl"
    save_records(records, path)
    loaded = load_records(path)
    assert len(loaded) == 3
    assert isinstance(loaded[0].parsed, Answers)
    assert loaded[0].raw_response == "treat: Avastin"
    assert loaded[1].parsed == DONT_KNOW
    assert loaded[2].parsed == UNSTRUCTURED
    # prompt text is not persisted; everything else survives
    assert loaded[0].prompt is None
    assert completed_keys(loaded) == completed_keys(records)


def test_record_schema_version_enforced():
    record = make_record(DONT_KNOW)
    data = record_to_json(record)
    data["schema_version"] = 99
    with pytest.raises(ValueError, match="schema_version"):
        record_from_json(data)


def test_concurrent_run_matches_sequential():
    """max_in_flight > 1 returns the same records in the same (loop) order."""
    def backend():
        return ScriptedBackend(
            "fix", BackendKind.GENERATIVE, {"default": {"text": "treat: avastin"}}
        )

    sequential = run_queries(["amd"], {"amd": notes(4)}, backend())
    concurrent = run_queries(["amd"], {"amd": notes(4)}, backend(), max_in_flight=4)
    seq_keys = [(r.category, r.question_id, r.note_id, r.raw_response) for r in sequential.records]
    conc_keys = [(r.category, r.question_id, r.note_id, r.raw_response) for r in concurrent.records]
    assert seq_keys == conc_keys
    assert len(concurrent.records) == 60


def test_concurrent_checkpointing_is_lossless():
    backend = ScriptedBackend(
        "fix", BackendKind.GENERATIVE, {"default": {"text": "I do not know."}}
    )
    seen = []
    result = run_queries(
        ["amd"], {"amd": notes(3)}, backend, max_in_flight=3, on_record=seen.append
    )
    assert len(seen) == len(result.records) == 45
    assert completed_keys(seen) == completed_keys(result.records)
