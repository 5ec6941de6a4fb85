"""Shared test fixtures: scripted providers and record factories."""

from __future__ import annotations

import numpy as np
import pytest

from notekg.gateway import Answer, Answers, QueryRecord
from notekg.prompting import EntityCategory
from notekg.similarity import SimilarityProvider, TrigramProvider


class ScriptedSimilarityProvider(SimilarityProvider):
    """Similarity provider driven by an explicit pair table.

    Pairs are unordered; anything not in the table scores ``default``.
    Identical texts always score 1.0. ``embed`` is unsupported on purpose:
    tests that need embeddings use the real TrigramProvider.
    """

    name = "scripted-similarity"

    def __init__(self, pairs: dict[tuple[str, str], float], default: float = 0.0):
        self._pairs = {frozenset(k): v for k, v in pairs.items()}
        self._default = default

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError("scripted provider has no embedding space")

    def similarity(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        return self._pairs.get(frozenset((a, b)), self._default)


@pytest.fixture
def trigram_provider() -> TrigramProvider:
    return TrigramProvider()


def make_record(
    parsed,
    disease: str = "amd",
    category: EntityCategory = EntityCategory.TREATMENT,
    note_id: str = "n1",
    question_id: str = "T1",
    backend: str = "test-backend",
    raw: str = "",
) -> QueryRecord:
    return QueryRecord(
        prompt=None,
        backend=backend,
        raw_response=raw,
        parsed=parsed,
        latency=0.0,
        disease=disease,
        category=category,
        note_id=note_id,
        question_id=question_id,
    )


def answers(*pairs: tuple[str, float]) -> Answers:
    return Answers(tuple(Answer(text, score) for text, score in pairs))
