"""Disease alias expansion and disease-specific note identification.

A disease is matched in a note either by a direct token-boundary occurrence
of any known alias, or - to catch typos and unlisted surface forms - by
running an NER provider over the note and similarity-scoring the extracted
mentions against the canonical disease name.
"""

from __future__ import annotations

import hashlib
import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from .corpus import ClinicalNote, Corpus
from .similarity import ProviderError, SimilarityProvider

DEFAULT_NOTE_THRESHOLD = 0.8


@dataclass(frozen=True)
class DiseaseConcept:
    """A disease and the set of surface forms it may appear as.

    ``unknown`` flags concepts the alias provider had no entry for (the
    alias set then degenerates to the canonical form alone).
    """

    canonical: str
    aliases: frozenset[str]
    unknown: bool = False

    def __post_init__(self):
        if not self.canonical.strip():
            raise ValueError("canonical disease name must be non-empty")
        if self.canonical not in self.aliases:
            raise ValueError("canonical form must be among the aliases")


@dataclass(frozen=True)
class NerSpan:
    """A mention surface form with character offsets into the source text."""

    text: str
    start: int
    end: int


class AliasProvider(ABC):
    name: str = "alias-provider"

    @abstractmethod
    def expand(self, canonical: str) -> set[str]:
        """Aliases for ``canonical``; empty set when the concept is unknown."""


class NerProvider(ABC):
    name: str = "ner-provider"

    @abstractmethod
    def extract(self, text: str) -> list[NerSpan]:
        """Disease mentions found in ``text``."""


class FileAliasProvider(AliasProvider):
    """Alias table from a JSON file mapping canonical name -> list of aliases.

    Lookup is case-insensitive.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.name = f"alias-file:{self.path}"
        raw = json.loads(self.path.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ProviderError(f"{self.name}: alias table must be a JSON object")
        self._table: dict[str, set[str]] = {}
        for canonical, aliases in raw.items():
            if not isinstance(aliases, list):
                raise ProviderError(f"{self.name}: aliases for {canonical!r} must be a list")
            self._table[canonical.lower()] = {str(a) for a in aliases}

    def expand(self, canonical: str) -> set[str]:
        return set(self._table.get(canonical.lower(), set()))


class NullNerProvider(NerProvider):
    """No-op NER; the similarity branch of note identification never fires."""

    name = "ner-none"

    def extract(self, text: str) -> list[NerSpan]:
        return []


class ScriptedNerProvider(NerProvider):
    """File-backed NER for tests and fixtures.

    The script maps a sha1 of the note text (or the exact text) to a list of
    {"text", "start", "end"} spans.
    """

    def __init__(self, script: str | Path | dict):
        if isinstance(script, (str, Path)):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        self._spans = script
        self.name = "ner-scripted"

    def extract(self, text: str) -> list[NerSpan]:
        key = hashlib.sha1(text.encode("utf-8")).hexdigest()
        raw = self._spans.get(key, self._spans.get(text, []))
        return [NerSpan(s["text"], int(s["start"]), int(s["end"])) for s in raw]


class RemoteNerProvider(NerProvider):
    """Client for the sidecar /ner protocol: {"text"} -> {"spans": [...]}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.name = f"remote-ner:{self.endpoint}"

    def extract(self, text: str) -> list[NerSpan]:
        import requests

        try:
            resp = requests.post(
                f"{self.endpoint}/ner", json={"text": text}, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:
            raise ProviderError(f"{self.name}: ner request failed: {exc}") from exc
        spans = payload.get("spans")
        if not isinstance(spans, list):
            raise ProviderError(f"{self.name}: malformed /ner response")
        return [NerSpan(s["text"], int(s["start"]), int(s["end"])) for s in spans]


def expand_aliases(disease: str, provider: AliasProvider) -> DiseaseConcept:
    """Expand a disease into its alias set (always including the input form)."""
    if not disease.strip():
        raise ValueError("disease must be non-empty")
    try:
        aliases = provider.expand(disease)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"{provider.name}: alias expansion failed: {exc}") from exc
    unknown = not aliases
    return DiseaseConcept(
        canonical=disease, aliases=frozenset(aliases) | {disease}, unknown=unknown
    )


def _boundary_pattern(alias: str) -> re.Pattern:
    # Token-boundary containment: "amd" must not match inside "amduscia".
    return re.compile(rf"(?<!\w){re.escape(alias)}(?!\w)", re.IGNORECASE)


def _check_span(span: NerSpan, note: ClinicalNote, provider_name: str) -> None:
    if not (0 <= span.start < span.end <= len(note.text)):
        raise ProviderError(
            f"{provider_name}: invalid span offsets {span.start}..{span.end} "
            f"for note {note.id!r}"
        )
    if note.text[span.start : span.end] != span.text:
        raise ProviderError(
            f"{provider_name}: span text mismatch at {span.start}..{span.end} "
            f"for note {note.id!r}"
        )


def identify_disease_notes(
    corpus: Corpus,
    concept: DiseaseConcept,
    ner: NerProvider,
    sim: SimilarityProvider,
    threshold_notes_identification: float = DEFAULT_NOTE_THRESHOLD,
) -> list[ClinicalNote]:
    """Select the notes that mention the disease, in corpus order.

    A note qualifies if any alias occurs on token boundaries
    (case-insensitive), or failing that, if some NER-extracted mention scores
    above the threshold against the canonical form. NER runs only on
    substring misses, which keeps provider traffic down.
    """
    if not 0.0 <= threshold_notes_identification <= 1.0:
        raise ValueError("threshold_notes_identification must be in [0, 1]")
    patterns = [_boundary_pattern(alias) for alias in sorted(concept.aliases)]
    selected: list[ClinicalNote] = []
    for note in corpus:
        if any(p.search(note.text) for p in patterns):
            selected.append(note)
            continue
        try:
            spans = ner.extract(note.text)
        except ProviderError as exc:
            raise ProviderError(f"note {note.id!r}: {exc}") from exc
        for span in spans:
            _check_span(span, note, ner.name)
            if not span.text.strip():
                continue
            if sim.similarity(span.text, concept.canonical) > threshold_notes_identification:
                selected.append(note)
                break
    return selected
