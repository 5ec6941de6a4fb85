"""Uniform query interface over heterogeneous model backends.

Two backend kinds exist: extractive QA services whose answers must be
substrings of the supplied context, and generative services whose free text
is parsed against the guided output grammar. Parsing is total - every raw
response classifies as structured answers, a refusal, or unstructured
output - so downstream safety metrics can count what each backend produced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Union

from .postprocess import is_refusal, load_refusals
from .prompting import EntityCategory, Prompt, PromptStyle

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
DEFAULT_TOP_K = 5
#: Score assigned to generative answers when the backend reports no
#: token log-probabilities.
DEFAULT_GENERATIVE_SCORE = 0.5

#: Env var holding a bearer token for HTTP backends (secrets stay out of config files).
TOKEN_ENV_VAR = "NOTEKG_BACKEND_TOKEN"


class BackendError(RuntimeError):
    """Non-retryable backend failure (protocol violation, 4xx)."""


class BackendTransportError(BackendError):
    """Retryable transport failure: timeout, connection error, 5xx, 429."""


class BackendExhaustedError(BackendError):
    """Retry budget spent without a successful call."""

    def __init__(self, backend: str, prompt: Prompt, attempts: int, cause: Exception):
        super().__init__(
            f"backend {backend!r} exhausted after {attempts} attempts for "
            f"question {prompt.question_id or prompt.question!r} "
            f"on note {prompt.note_id!r}: {cause}"
        )
        self.backend = backend
        self.prompt = prompt
        self.attempts = attempts
        self.cause = cause


class BackendKind(Enum):
    EXTRACTIVE_QA = "extractive_qa"
    GENERATIVE = "generative"


@dataclass(frozen=True)
class Answer:
    """One backend answer with a probability-like score."""

    text: str
    score: float

    def __post_init__(self):
        if not self.text:
            raise ValueError("answer text must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"answer score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Answers:
    answers: tuple[Answer, ...]

    def __post_init__(self):
        if not self.answers:
            raise ValueError("Answers requires at least one answer")

    kind = "answers"


@dataclass(frozen=True)
class DontKnow:
    kind = "dont_know"


@dataclass(frozen=True)
class Unstructured:
    kind = "unstructured"


Parsed = Union[Answers, DontKnow, Unstructured]

DONT_KNOW = DontKnow()
UNSTRUCTURED = Unstructured()


@dataclass(frozen=True)
class QueryRecord:
    """Audit record of one backend call.

    ``raw_response`` is preserved byte-exact. ``prompt`` is None only for
    records rehydrated from checkpoints, which persist a prompt digest
    instead of the full rendered text.
    """

    prompt: Prompt | None
    backend: str
    raw_response: str
    parsed: Parsed
    latency: float
    disease: str
    category: EntityCategory
    note_id: str
    question_id: str


@dataclass(frozen=True)
class BackendResult:
    """Raw payload a backend returns before parsing."""

    raw_text: str = ""
    answers: tuple[tuple[str, float], ...] | None = None
    token_logprobs: tuple[float, ...] | None = None


class ModelBackend(ABC):
    """One model service. Backends never retry internally; timeouts raise."""

    kind: BackendKind
    name: str

    @abstractmethod
    def query(self, prompt: Prompt) -> BackendResult:
        """Execute one call. Raise BackendTransportError on transport trouble."""


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

#: Accepted labels per category; transcripts show some models emitting
#: "treatment:" or "effect:" instead of the canonical question_type.
_LABEL_SYNONYMS = {
    EntityCategory.TREATMENT: ("treat", "treatment"),
    EntityCategory.FACTOR: ("factor",),
    EntityCategory.COEXISTS_WITH: ("coexists_with", "coexists with", "effect"),
}

_PLACEHOLDER_RE = re.compile(r"\[\s*entity", re.IGNORECASE)
_BULLET_RE = re.compile(r"^\s*[-*]\s+(.*\S)\s*$")


def _clamp_score(score: float) -> float:
    return min(1.0, max(0.0, score))


def derive_score(token_logprobs, default: float = DEFAULT_GENERATIVE_SCORE) -> float:
    """exp(mean token log-prob) when available, else the configured default."""
    if token_logprobs:
        return _clamp_score(math.exp(math.fsum(token_logprobs) / len(token_logprobs)))
    return _clamp_score(default)


def _label_line(line: str, expected: EntityCategory) -> str | None:
    """Return the text after the label when the line matches the category."""
    stripped = line.strip()
    for label in _LABEL_SYNONYMS[expected]:
        prefix = f"{label}:"
        if stripped.lower().startswith(prefix):
            rest = stripped[len(prefix) :].strip()
            # Some models duplicate the label ("factor: factor: ...").
            lowered = rest.lower()
            for again in _LABEL_SYNONYMS[expected]:
                if lowered.startswith(f"{again}:"):
                    rest = rest[len(again) + 1 :].strip()
                    lowered = rest.lower()
            return rest
    return None


def parse_guided_response(
    raw: str,
    expected: EntityCategory,
    score: float = DEFAULT_GENERATIVE_SCORE,
    refusals: frozenset[str] | None = None,
) -> Parsed:
    """Classify a guided-style response. Total: never raises.

    The grammar is an optional "### Response" header followed by
    "<label>: e1, e2, ...", with the label matching the expected category's
    question_type or a known synonym. A response whose entire content is a
    refusal variation classifies as DontKnow; template echoes (placeholder
    entities, empty entity lists, re-emitted instructions) and anything else
    land in Unstructured.
    """
    if refusals is None:
        refusals = load_refusals()
    content_lines = [
        line
        for line in raw.splitlines()
        if line.strip() and not line.strip().startswith("### Response")
    ]
    if is_refusal(" ".join(content_lines) if content_lines else raw, refusals):
        return DONT_KNOW

    score = _clamp_score(score)
    for line in content_lines:
        rest = _label_line(line, expected)
        if rest is None:
            continue
        entities = [e.strip() for e in rest.split(",") if e.strip()]
        if not entities:
            continue
        if any(_PLACEHOLDER_RE.search(e) for e in entities):
            return UNSTRUCTURED
        return Answers(tuple(Answer(e, score) for e in entities))
    return UNSTRUCTURED


def parse_freeform_response(
    raw: str,
    score: float = DEFAULT_GENERATIVE_SCORE,
    refusals: frozenset[str] | None = None,
) -> Parsed:
    """Classify a non-guided generative response.

    A response whose first content line is a refusal counts as DontKnow even
    when an explanation rambles on after it (models frequently append one);
    bulleted lists split into one answer per bullet; anything else is a
    single answer.
    """
    if refusals is None:
        refusals = load_refusals()
    text = raw.strip()
    if not text:
        return UNSTRUCTURED
    first_line = text.splitlines()[0]
    if is_refusal(text, refusals) or is_refusal(first_line, refusals):
        return DONT_KNOW
    score = _clamp_score(score)
    bullets = [m.group(1) for m in map(_BULLET_RE.match, text.splitlines()) if m]
    if bullets:
        return Answers(tuple(Answer(b, score) for b in bullets))
    return Answers((Answer(text, score),))


# ---------------------------------------------------------------------------
# Query execution
# ---------------------------------------------------------------------------


def query(
    backend: ModelBackend,
    prompt: Prompt,
    disease: str = "",
    retries: int = DEFAULT_RETRIES,
    backoff_base: float = 0.5,
    default_score: float = DEFAULT_GENERATIVE_SCORE,
    sleep: Callable[[float], None] = time.sleep,
) -> QueryRecord:
    """Execute one prompt with bounded retries and classify the response.

    Transport errors retry with exponential backoff up to ``retries``
    attempts; an unusable-but-successful response never retries (it becomes
    an Unstructured record). A spent budget raises BackendExhaustedError.
    """
    start = time.perf_counter()
    last_exc: Exception | None = None
    result: BackendResult | None = None
    for attempt in range(max(1, retries)):
        try:
            result = backend.query(prompt)
            break
        except BackendTransportError as exc:
            last_exc = exc
            logger.warning(
                "transport error from %s (attempt %d/%d): %s",
                backend.name,
                attempt + 1,
                retries,
                exc,
            )
            if attempt + 1 < retries:
                sleep(backoff_base * (2**attempt))
    if result is None:
        raise BackendExhaustedError(backend.name, prompt, max(1, retries), last_exc)

    latency = time.perf_counter() - start

    if backend.kind is BackendKind.EXTRACTIVE_QA:
        raw_response = json.dumps(
            {"answers": [{"text": t, "score": s} for t, s in (result.answers or ())]},
            ensure_ascii=False,
        )
        parsed = _parse_extractive(result.answers or (), prompt.context)
    else:
        raw_response = result.raw_text
        score = derive_score(result.token_logprobs, default_score)
        if prompt.style is PromptStyle.GUIDED:
            parsed = parse_guided_response(raw_response, prompt.category, score)
        else:
            parsed = parse_freeform_response(raw_response, score)

    return QueryRecord(
        prompt=prompt,
        backend=backend.name,
        raw_response=raw_response,
        parsed=parsed,
        latency=latency,
        disease=disease,
        category=prompt.category,
        note_id=prompt.note_id,
        question_id=prompt.question_id,
    )


def _parse_extractive(answers: tuple[tuple[str, float], ...], context: str) -> Parsed:
    if not answers:
        return UNSTRUCTURED
    parsed = []
    for text, score in answers:
        text = text.strip()
        if not text or text not in context:
            # An extractive answer that is not a context substring breaks the
            # open-book contract; the whole record is unusable.
            return UNSTRUCTURED
        parsed.append(Answer(text, _clamp_score(float(score))))
    return Answers(tuple(parsed))


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(TOKEN_ENV_VAR)
    return {"Authorization": f"Bearer {token}"} if token else {}


def _post_json(url: str, payload: dict, timeout: float, name: str) -> dict:
    import requests

    try:
        resp = requests.post(url, json=payload, timeout=timeout, headers=_auth_headers())
    except requests.RequestException as exc:
        raise BackendTransportError(f"{name}: {exc}") from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise BackendTransportError(f"{name}: HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise BackendError(f"{name}: HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise BackendError(f"{name}: non-JSON response") from exc


class HttpGenerativeBackend(ModelBackend):
    """Generative wire protocol: POST /generate {prompt, max_tokens, temperature}."""

    kind = BackendKind.GENERATIVE

    def __init__(
        self,
        name: str,
        endpoint: str,
        max_tokens: int = 256,
        temperature: float = 0.0,
        timeout: float = 60.0,
    ):
        self.name = name
        self.endpoint = endpoint.rstrip("/")
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.timeout = timeout

    def query(self, prompt: Prompt) -> BackendResult:
        payload = {
            "prompt": prompt.text,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }
        data = _post_json(f"{self.endpoint}/generate", payload, self.timeout, self.name)
        if "text" not in data or not isinstance(data["text"], str):
            raise BackendError(f"{self.name}: /generate response missing 'text'")
        logprobs = data.get("token_logprobs")
        return BackendResult(
            raw_text=data["text"],
            token_logprobs=tuple(logprobs) if logprobs else None,
        )


class HttpQaBackend(ModelBackend):
    """Extractive wire protocol: POST /qa {question, context, top_k}."""

    kind = BackendKind.EXTRACTIVE_QA

    def __init__(self, name: str, endpoint: str, top_k: int = DEFAULT_TOP_K, timeout: float = 60.0):
        self.name = name
        self.endpoint = endpoint.rstrip("/")
        self.top_k = top_k
        self.timeout = timeout

    def query(self, prompt: Prompt) -> BackendResult:
        payload = {"question": prompt.question, "context": prompt.context, "top_k": self.top_k}
        data = _post_json(f"{self.endpoint}/qa", payload, self.timeout, self.name)
        answers = data.get("answers")
        if not isinstance(answers, list):
            raise BackendError(f"{self.name}: /qa response missing 'answers'")
        return BackendResult(
            answers=tuple((a["text"], float(a["score"])) for a in answers)
        )


def prompt_digest(text: str) -> str:
    """Stable short digest used to key scripted responses and checkpoints."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class ScriptedBackend(ModelBackend):
    """Fixture backend reading canned responses from a JSON script.

    Responses are looked up by prompt digest ("by_hash"), by the readable
    "<question_id>|<note_id>" key ("by_key"), or consumed in order
    ("ordinal"); a "default" entry catches everything else. Response entries
    are {"text", optional "token_logprobs"} for generative scripts,
    {"answers": [{"text", "score"}]} for QA scripts. An entry may instead
    carry {"error": "..."} to raise a transport error, optionally with
    "fail_times": N to succeed after N failures ("response" holds the
    eventual payload).
    """

    def __init__(self, name: str, kind: BackendKind, script: str | Path | dict):
        self.name = name
        self.kind = kind
        if isinstance(script, (str, Path)):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        self._by_hash: dict = script.get("by_hash", {})
        self._by_key: dict = script.get("by_key", {})
        self._ordinal: list = list(script.get("ordinal", []))
        self._default = script.get("default")
        self._calls = 0
        self._failures: dict[str, int] = {}
        self._lock = threading.Lock()

    def _lookup(self, prompt: Prompt):
        key = f"{prompt.question_id}|{prompt.note_id}"
        digest = prompt_digest(prompt.text)
        if digest in self._by_hash:
            return digest, self._by_hash[digest]
        if key in self._by_key:
            return key, self._by_key[key]
        if self._calls < len(self._ordinal):
            return f"ordinal:{self._calls}", self._ordinal[self._calls]
        if self._default is not None:
            return "default", self._default
        raise BackendError(f"{self.name}: no scripted response for {key} / {digest}")

    def query(self, prompt: Prompt) -> BackendResult:
        with self._lock:
            key, entry = self._lookup(prompt)
            self._calls += 1
            if "error" in entry:
                fail_times = entry.get("fail_times")
                seen = self._failures.get(key, 0)
                if fail_times is None or seen < fail_times:
                    self._failures[key] = seen + 1
                    raise BackendTransportError(
                        f"{self.name}: scripted failure: {entry['error']}"
                    )
                entry = entry.get("response", {})
        if self.kind is BackendKind.EXTRACTIVE_QA:
            answers = tuple(
                (a["text"], float(a["score"])) for a in entry.get("answers", [])
            )
            return BackendResult(answers=answers)
        logprobs = entry.get("token_logprobs")
        return BackendResult(
            raw_text=entry.get("text", ""),
            token_logprobs=tuple(logprobs) if logprobs else None,
        )
