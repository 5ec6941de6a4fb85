"""Similarity contract tests with oracle-frozen golden values."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from notekg.similarity import (
    SimilarityError,
    TrigramProvider,
    cosine,
    similarity,
)
from oracles import oracle_similarity

# Golden values computed with tests/oracles.py (dict-based trigram cosine).
GOLDEN_AREDS_PAIR = 0.6708203932499369
GOLDEN_GROUPED_PAIR = 0.8547043234472845
GOLDEN_MISSPELLING = 0.8651809126974003


def test_cosine_self_similarity():
    v = np.array([0.3, 1.7, 0.0, 2.2])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_length_mismatch_errors():
    with pytest.raises(SimilarityError):
        cosine(np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0]))


def test_cosine_zero_vector_errors():
    with pytest.raises(SimilarityError):
        cosine(np.zeros(4), np.array([1.0, 0.0, 0.0, 0.0]))


def test_identical_texts_score_one(trigram_provider):
    assert similarity(trigram_provider, "abc", "abc") == pytest.approx(1.0, abs=1e-12)


def test_default_embedding_is_order_insensitive(trigram_provider):
    assert similarity(trigram_provider, "a b", "b a") == pytest.approx(1.0, abs=1e-12)


def test_empty_text_errors(trigram_provider):
    with pytest.raises(SimilarityError):
        similarity(trigram_provider, "  ", "something")


def test_punctuation_only_text_errors(trigram_provider):
    # "..." normalizes to nothing -> zero vector -> degenerate-text error
    with pytest.raises(SimilarityError):
        similarity(trigram_provider, "...", "something")


def test_areds_pair_golden(trigram_provider):
    got = similarity(trigram_provider, "areds", "areds-2 vitamins")
    assert got == pytest.approx(GOLDEN_AREDS_PAIR, abs=1e-9)
    assert oracle_similarity("areds", "areds-2 vitamins") == pytest.approx(
        GOLDEN_AREDS_PAIR, abs=0
    )


def test_grouped_pair_exceeds_grouping_threshold(trigram_provider):
    got = similarity(trigram_provider, "eating spinach and fish", "spinach and fish")
    assert got == pytest.approx(GOLDEN_GROUPED_PAIR, abs=1e-9)
    assert got > 0.8
    assert oracle_similarity("eating spinach and fish", "spinach and fish") == pytest.approx(
        GOLDEN_GROUPED_PAIR, abs=0
    )


def test_misspelling_pair_golden(trigram_provider):
    got = similarity(trigram_provider, "macular degenration", "macular degeneration")
    assert got == pytest.approx(GOLDEN_MISSPELLING, abs=1e-9)
    assert got > 0.8


TEXTS = st.text(
    alphabet=st.sampled_from("abcdefg hijklmno"), min_size=1, max_size=40
).filter(lambda t: any(c.isalnum() for c in t))


@given(a=TEXTS, b=TEXTS)
def test_symmetry_and_range(a, b):
    provider = TrigramProvider()
    ab = similarity(provider, a, b)
    ba = similarity(provider, b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    # built-in provider components are nonnegative, so scores sit in [0, 1]
    assert -1e-12 <= ab <= 1.0 + 1e-12
    assert ab >= -1e-12


@given(a=TEXTS, b=TEXTS)
def test_provider_matches_oracle(a, b):
    provider = TrigramProvider()
    assert similarity(provider, a, b) == pytest.approx(oracle_similarity(a, b), abs=1e-9)


def test_embedding_is_deterministic_and_fixed_length(trigram_provider):
    v1 = trigram_provider.embed("dry armd, stable")
    v2 = trigram_provider.embed("dry armd, stable")
    assert np.array_equal(v1, v2)
    assert v1.shape == (trigram_provider.dim,)
    assert np.all(np.isfinite(v1))
    assert math.isclose(float(np.linalg.norm(v1)), 1.0, abs_tol=1e-12)
