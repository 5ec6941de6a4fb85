"""Built-in model implementations behind the sidecar endpoints.

Each endpoint gets its model through a loader registry keyed by model
identifier, so deployments can pin real checkpoints in config while the
defaults stay lightweight and deterministic: a hashed-trigram embedder, a
lexicon NER, a token-overlap extractive QA, and a generator that answers
guided prompts by running the QA model over the prompt's own context.
Transformer-backed loaders would register here under their checkpoint names.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_NON_ALNUM = re.compile(r"[^a-z0-9]+")

DEFAULT_LEXICON = (
    "age-related macular degeneration",
    "macular degeneration",
    "armd",
    "amd",
    "drusen",
    "glaucoma",
    "cataract",
    "diabetic retinopathy",
    "retinal detachment",
    "choroidal neovascularization",
    "cnvm",
    "metamorphopsia",
)


class ModelLoadError(RuntimeError):
    """A configured model identifier cannot be loaded."""


class TrigramEmbedder:
    """Hashed bag of per-token character trigrams, always unit L2 norm."""

    def __init__(self, dim: int = 1024):
        self.dim = dim
        self.name = f"trigram-hash-{dim}"

    def embed(self, text: str) -> list[float]:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _NON_ALNUM.sub(" ", text.lower()).split():
            padded = f" {token} "
            for i in range(len(padded) - 2):
                gram = padded[i : i + 3]
                vec[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # degenerate text (no alphanumerics): deterministic unit fallback
            vec[zlib.crc32(text.encode("utf-8")) % self.dim] = 1.0
            norm = 1.0
        return (vec / norm).tolist()


@dataclass(frozen=True)
class Span:
    text: str
    start: int
    end: int


class LexiconNer:
    """Finds lexicon terms on token boundaries; spans are slices of the input."""

    def __init__(self, terms=DEFAULT_LEXICON):
        self.name = f"lexicon-{len(tuple(terms))}"
        # longest first so overlapping shorter terms lose
        self._patterns = [
            re.compile(rf"(?<!\w){re.escape(term)}(?!\w)", re.IGNORECASE)
            for term in sorted(terms, key=len, reverse=True)
        ]

    def extract(self, text: str) -> list[Span]:
        taken: list[tuple[int, int]] = []
        spans: list[Span] = []
        for pattern in self._patterns:
            for match in pattern.finditer(text):
                start, end = match.span()
                if any(start < t_end and end > t_start for t_start, t_end in taken):
                    continue
                taken.append((start, end))
                spans.append(Span(text[start:end], start, end))
        spans.sort(key=lambda s: s.start)
        return spans


def _tokens(text: str) -> set[str]:
    return set(_NON_ALNUM.sub(" ", text.lower()).split())


_SEGMENT_RE = re.compile(r"[.!?;\n]+")


class OverlapQa:
    """Extractive QA scoring context segments by question-token overlap.

    Every answer is a trimmed slice of the context, with score =
    |question tokens in segment| / |question tokens| (always in [0, 1]).
    """

    name = "token-overlap"

    def answer(self, question: str, context: str, top_k: int) -> list[tuple[str, float]]:
        q_tokens = _tokens(question)
        if not q_tokens:
            return []
        scored = []
        for position, segment in enumerate(_SEGMENT_RE.split(context)):
            segment = segment.strip()
            if not segment:
                continue
            overlap = len(q_tokens & _tokens(segment))
            if overlap == 0:
                continue
            scored.append((overlap / len(q_tokens), position, segment))
        scored.sort(key=lambda s: (-s[0], s[1]))
        return [(segment, min(1.0, score)) for score, _, segment in scored[:top_k]]


_GUIDED_INPUT_RE = re.compile(
    r"question_type:\s*(?P<qtype>\S+)\s*\n"
    r"question:\s*(?P<question>.*?)\s*\n"
    r"context:\s*(?P<context>.*?)\n\s*\n### Response\s*$",
    re.DOTALL,
)


class GuidedQaGenerator:
    """Generative stand-in that answers guided prompts from their own context.

    Parses the trailing input block of a guided prompt, runs extractive QA
    over the embedded context, and emits the guided response grammar
    ("<question_type>: e1, e2" or "I do not know."). Non-guided prompts get
    the best extractive span or the refusal.
    """

    name = "guided-qa"

    def __init__(self, qa: OverlapQa | None = None, min_score: float = 0.2):
        self._qa = qa or OverlapQa()
        self._min_score = min_score

    def generate(self, prompt: str, max_tokens: int) -> str:
        # Parse only the trailing input block; the guided preamble contains a
        # format declaration that would otherwise match first.
        block_start = prompt.rfind("### Input")
        match = _GUIDED_INPUT_RE.search(prompt[block_start:]) if block_start >= 0 else None
        if match:
            qtype = match.group("qtype")
            answers = self._qa.answer(match.group("question"), match.group("context"), 3)
            answers = [(t, s) for t, s in answers if s >= self._min_score]
            if not answers:
                return "I do not know."
            return f"{qtype}: " + ", ".join(text for text, _ in answers)
        answers = self._qa.answer(prompt, prompt, 1)
        if not answers:
            return "I do not know."
        return answers[0][0][: max(1, max_tokens)]


def _load_lexicon_file(path: str) -> tuple[str, ...]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    terms = tuple(line.strip() for line in lines if line.strip())
    if not terms:
        raise ModelLoadError(f"lexicon file {path} contains no terms")
    return terms


def load_embedder(identifier: str):
    if identifier.startswith("trigram-hash"):
        parts = identifier.rsplit("-", 1)
        dim = int(parts[1]) if parts[1].isdigit() else 1024
        return TrigramEmbedder(dim)
    raise ModelLoadError(f"unknown embed model: {identifier!r}")


def load_ner(identifier: str):
    if identifier == "lexicon":
        return LexiconNer()
    if identifier.startswith("lexicon:"):
        return LexiconNer(_load_lexicon_file(identifier.split(":", 1)[1]))
    raise ModelLoadError(f"unknown ner model: {identifier!r}")


def load_qa(identifier: str):
    if identifier == "token-overlap":
        return OverlapQa()
    raise ModelLoadError(f"unknown qa model: {identifier!r}")


def load_generator(identifier: str):
    if identifier == "guided-qa":
        return GuidedQaGenerator()
    raise ModelLoadError(f"unknown generate model: {identifier!r}")
