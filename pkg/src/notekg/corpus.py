"""Clinical note ingestion and corpus preprocessing.

Preprocessing removes near-duplicate notes (copy-forward template noise) with
a greedy pairwise cosine scan and excludes notes below a minimum word count.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _kernels
from .similarity import SimilarityError, SimilarityProvider

logger = logging.getLogger(__name__)

#: Above this corpus size the exact O(n^2) duplicate scan gets expensive;
#: we warn rather than silently approximate.
PAIRWISE_WARN_SIZE = 10_000

DEFAULT_MIN_WORDS = 5
DEFAULT_DEDUP_THRESHOLD = 0.8


class CorpusError(ValueError):
    """Malformed input file or corpus invariant violation."""


@dataclass(frozen=True)
class ClinicalNote:
    """One EMR note. ``text`` is preserved byte-exact from ingestion."""

    id: str
    text: str
    date: str | None = None

    @property
    def word_count(self) -> int:
        """Number of whitespace-separated tokens in the note text."""
        return len(self.text.split())


@dataclass(frozen=True)
class Corpus:
    """Ordered collection of notes with unique ids (ingestion order is stable)."""

    notes: tuple[ClinicalNote, ...]

    def __post_init__(self):
        seen: set[str] = set()
        for note in self.notes:
            if note.id in seen:
                raise CorpusError(f"duplicate note id: {note.id!r}")
            seen.add(note.id)

    def __iter__(self) -> Iterator[ClinicalNote]:
        return iter(self.notes)

    def __len__(self) -> int:
        return len(self.notes)

    def ids(self) -> list[str]:
        return [note.id for note in self.notes]


@dataclass(frozen=True)
class DuplicateDrop:
    """A note removed by the duplicate scan, and the partner that displaced it."""

    dropped_id: str
    survivor_id: str
    similarity: float


@dataclass
class PreprocessResult:
    corpus: Corpus
    dropped_short: list[str] = field(default_factory=list)
    dropped_duplicates: list[DuplicateDrop] = field(default_factory=list)


def _record_error(path, line_num: int, message: str) -> CorpusError:
    return CorpusError(f"{path}: line {line_num}: {message}")


def ingest_notes(source_path: str | Path, format: str = "jsonl") -> Corpus:
    """Read notes from a JSONL or CSV file into a Corpus.

    JSONL records are {"id": ..., "text": ..., optional "date": ...}; CSV
    needs an id,text header. Both id and text must be non-empty. Malformed
    records fail with the offending line number, duplicate ids with the id.
    """
    path = Path(source_path)
    if format == "jsonl":
        notes = list(_read_jsonl(path))
    elif format == "csv":
        notes = list(_read_csv(path))
    else:
        raise CorpusError(f"unknown corpus format: {format!r} (expected jsonl or csv)")
    return Corpus(tuple(notes))


def _validated_note(record: dict, path: Path, line_num: int) -> ClinicalNote:
    note_id = record.get("id")
    text = record.get("text")
    if not isinstance(note_id, str) or not note_id.strip():
        raise _record_error(path, line_num, "missing or empty 'id'")
    if not isinstance(text, str) or not text.strip():
        raise _record_error(path, line_num, "missing or empty 'text'")
    date = record.get("date")
    if date is not None and not isinstance(date, str):
        raise _record_error(path, line_num, "'date' must be a string")
    return ClinicalNote(id=note_id, text=text, date=date)


def _read_jsonl(path: Path) -> Iterator[ClinicalNote]:
    with path.open(encoding="utf-8") as handle:
        for line_num, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _record_error(path, line_num, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise _record_error(path, line_num, "record is not an object")
            yield _validated_note(record, path, line_num)


def _read_csv(path: Path) -> Iterator[ClinicalNote]:
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"id", "text"} <= set(reader.fieldnames):
            raise CorpusError(f"{path}: CSV header must contain 'id' and 'text'")
        for record in reader:
            yield _validated_note(record, path, reader.line_num)


def save_notes(corpus: Corpus, path: str | Path) -> None:
    """Serialize the corpus back to the JSONL record shape."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for note in corpus:
            record: dict = {"id": note.id, "text": note.text}
            if note.date is not None:
                record["date"] = note.date
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def preprocess(
    corpus: Corpus,
    sim: SimilarityProvider,
    threshold_preprocessing: float = DEFAULT_DEDUP_THRESHOLD,
    min_words: int = DEFAULT_MIN_WORDS,
) -> Corpus:
    """Drop short notes, then near-duplicates (see preprocess_detailed)."""
    return preprocess_detailed(corpus, sim, threshold_preprocessing, min_words).corpus


def preprocess_detailed(
    corpus: Corpus,
    sim: SimilarityProvider,
    threshold_preprocessing: float = DEFAULT_DEDUP_THRESHOLD,
    min_words: int = DEFAULT_MIN_WORDS,
) -> PreprocessResult:
    """Preprocess with full accounting of what was dropped and why.

    Notes below ``min_words`` go first. Surviving notes are compared pairwise
    in ingestion order; when similarity exceeds the threshold the higher
    word-count member survives (ties: lexicographically smaller id) and the
    dropped note leaves later comparisons. The result is idempotent and every
    surviving pair sits at or below the threshold.
    """
    if not 0.0 <= threshold_preprocessing <= 1.0:
        raise ValueError("threshold_preprocessing must be in [0, 1]")
    if min_words < 1:
        raise ValueError("min_words must be >= 1")

    dropped_short = [n.id for n in corpus if n.word_count < min_words]
    survivors = [n for n in corpus if n.word_count >= min_words]
    if len(survivors) > PAIRWISE_WARN_SIZE:
        logger.warning(
            "duplicate scan is exact O(n^2); %d notes will take a while", len(survivors)
        )
    if len(survivors) < 2:
        return PreprocessResult(Corpus(tuple(survivors)), dropped_short, [])

    emb = np.stack([np.asarray(sim.embed(n.text), dtype=np.float64) for n in survivors])
    norms = np.linalg.norm(emb, axis=1)
    for note, norm in zip(survivors, norms):
        if norm == 0.0:
            raise SimilarityError(f"note {note.id!r}: embedding is a zero vector")
    emb /= norms[:, None]

    word_counts = np.array([n.word_count for n in survivors], dtype=np.int64)
    order = {note_id: rank for rank, note_id in enumerate(sorted(n.id for n in survivors))}
    id_ranks = np.array([order[n.id] for n in survivors], dtype=np.int64)

    keep, dropped_by, drop_sim = _kernels.greedy_dedup(
        emb, word_counts, id_ranks, threshold_preprocessing
    )

    duplicates = [
        DuplicateDrop(
            dropped_id=survivors[i].id,
            survivor_id=survivors[int(dropped_by[i])].id,
            similarity=float(drop_sim[i]),
        )
        for i in range(len(survivors))
        if not keep[i]
    ]
    kept = tuple(note for note, flag in zip(survivors, keep) if flag)
    return PreprocessResult(Corpus(kept), dropped_short, duplicates)
