"""Prediction cleanup: score filtering, normalization, refusal removal,
similarity grouping, and span splitting.

The stages compose into the trace: raw predictions are score-filtered at
0.08, their text normalized, refusal variants dropped, near-equivalent
predictions single-link grouped with the highest-scored member as
representative, and each representative finally split into individual entity
values on commas and standalone "and".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

DEFAULT_MIN_SCORE = 0.08
DEFAULT_GROUP_THRESHOLD = 0.8

_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_SPLIT_RE = re.compile(r"\s*,\s*|\s+and\s+")


def _read_asset_lines(name: str, override: str | Path | None) -> frozenset[str]:
    if override is not None:
        text = Path(override).read_text(encoding="utf-8")
    else:
        text = resources.files("notekg.assets").joinpath(name).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@lru_cache(maxsize=None)
def load_stopwords(override: str | None = None) -> frozenset[str]:
    return _read_asset_lines("stopwords.txt", override)


@lru_cache(maxsize=None)
def load_refusals(override: str | None = None) -> frozenset[str]:
    """Refusal variations, stored pre-normalized (lowercase, no punctuation)."""
    return _read_asset_lines("refusals.txt", override)


def light_normalize(text: str) -> str:
    """Lowercase, punctuation -> space, collapse whitespace. No stop-word removal.

    This is the normalization used for refusal matching; stop-word choices
    must not be able to mangle a refusal phrase.
    """
    return " ".join(_NON_ALNUM.sub(" ", text.lower()).split())


def is_refusal(text: str, refusals: frozenset[str] | None = None) -> bool:
    """True when the whole text is a variation of "I do not know"."""
    if refusals is None:
        refusals = load_refusals()
    return light_normalize(text) in refusals


def normalize(text: str, stopwords: frozenset[str] | None = None) -> str:
    """Lowercase, strip punctuation and stop-words, collapse whitespace.

    Returns "" for text that normalizes away entirely; callers drop those.
    """
    if stopwords is None:
        stopwords = load_stopwords()
    tokens = [t for t in _NON_ALNUM.sub(" ", text.lower()).split() if t not in stopwords]
    return " ".join(tokens)


@dataclass
class Prediction:
    """One prediction in the cleanup pipeline.

    ``text`` is the (normalized) form similarity and grouping operate on;
    ``surface`` keeps the original wording so span splitting still sees
    commas and conjunctions. ``payload`` lets callers ride arbitrary context
    (e.g. the originating relation) through grouping.
    """

    text: str
    score: float
    surface: str = ""
    payload: Any = None

    def __post_init__(self):
        if not self.surface:
            self.surface = self.text


@dataclass
class PredictionGroup:
    """A single-link cluster of near-equivalent predictions."""

    members: list[Prediction] = field(default_factory=list)

    @property
    def representative(self) -> Prediction:
        """Highest-scored member; ties go to longer text, then lexicographic order."""
        return min(self.members, key=lambda p: (-p.score, -len(p.text), p.text))


def filter_low_score(preds: Iterable, min_score: float = DEFAULT_MIN_SCORE) -> list:
    """Keep predictions whose score is at least ``min_score``.

    The boundary is inclusive: only strictly lower scores are removed.
    """
    if not 0.0 <= min_score <= 1.0:
        raise ValueError("min_score must be in [0, 1]")
    return [p for p in preds if p.score >= min_score]


def _match_text(pred) -> str:
    surface = getattr(pred, "surface", "")
    return surface or pred.text


def drop_refusals(preds: Iterable, refusals: frozenset[str] | None = None) -> list:
    """Remove predictions that are refusal variations ("I do not know", ...)."""
    if refusals is None:
        refusals = load_refusals()
    return [p for p in preds if not is_refusal(_match_text(p), refusals)]


def group_similar(
    preds: Sequence[Prediction],
    sim,
    sim_threshold: float = DEFAULT_GROUP_THRESHOLD,
) -> list[PredictionGroup]:
    """Single-link clustering of predictions by pairwise text similarity.

    Two predictions land in the same group when a chain of pairwise
    similarities strictly above ``sim_threshold`` connects them. Groups come
    back in order of their first member.
    """
    if not 0.0 <= sim_threshold <= 1.0:
        raise ValueError("sim_threshold must be in [0, 1]")
    n = len(preds)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            ri, rj = find(i), find(j)
            if ri == rj:
                continue
            if sim.similarity(preds[i].text, preds[j].text) > sim_threshold:
                parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, PredictionGroup] = {}
    for i, pred in enumerate(preds):
        groups.setdefault(find(i), PredictionGroup()).members.append(pred)
    return [groups[root] for root in sorted(groups)]


def split_spans(representative: Prediction) -> list[tuple[str, float]]:
    """Split a representative into individual entity values.

    Splits the surface form on commas and the standalone conjunction "and";
    every value inherits the representative's score.
    """
    values = [v.strip() for v in _SPLIT_RE.split(representative.surface)]
    return [(v, representative.score) for v in values if v]
