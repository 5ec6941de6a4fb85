"""Pipeline configuration: one JSON file carrying every tunable threshold.

Defaults are the standard hyperparameter values baked into the tests; every
score-like field is
range-checked with a field-level error message. Secrets (backend tokens)
come from the environment, never from the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .gateway import (
    BackendKind,
    HttpGenerativeBackend,
    HttpQaBackend,
    ModelBackend,
    ScriptedBackend,
)
from .prompting import PromptStyle
from .similarity import RemoteEmbeddingProvider, SimilarityProvider, TrigramProvider
from .terminology import (
    AliasProvider,
    FileAliasProvider,
    NerProvider,
    NullNerProvider,
    RemoteNerProvider,
    ScriptedNerProvider,
)


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


@dataclass
class PipelineConfig:
    threshold_preprocessing: float = 0.8
    threshold_notes_identification: float = 0.8
    relation_occurrence_number: int = 10
    relation_probability: float = 0.1
    postprocess_min_score: float = 0.08
    grouping_similarity: float = 0.8
    match_threshold: float = 0.8
    min_words: int = 5
    top_k: int = 5
    retry_budget: int = 3
    max_in_flight: int = 1
    prompt_style: str = "guided"
    exemplars: list = field(default_factory=list)
    stopwords_path: str | None = None
    refusals_path: str | None = None
    backend: str = ""
    backends: dict = field(default_factory=dict)
    similarity_provider: dict = field(default_factory=lambda: {"kind": "trigram"})
    alias_provider: dict = field(default_factory=dict)
    ner_provider: dict = field(default_factory=lambda: {"kind": "none"})

    _SCORE_FIELDS = (
        "threshold_preprocessing",
        "threshold_notes_identification",
        "relation_probability",
        "postprocess_min_score",
        "grouping_similarity",
        "match_threshold",
    )
    _NONNEG_INT_FIELDS = (
        "relation_occurrence_number",
        "top_k",
        "retry_budget",
        "max_in_flight",
    )

    def validate(self) -> None:
        for name in self._SCORE_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
                raise ConfigError(f"{name}: must be a score in [0, 1], got {value!r}")
        for name in self._NONNEG_INT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"{name}: must be a nonnegative integer, got {value!r}")
        if not isinstance(self.min_words, int) or self.min_words < 1:
            raise ConfigError(f"min_words: must be a positive integer, got {self.min_words!r}")
        try:
            PromptStyle(self.prompt_style)
        except ValueError:
            raise ConfigError(
                f"prompt_style: must be one of zero/few/instruct/guided, got {self.prompt_style!r}"
            ) from None
        if self.backend and self.backend not in self.backends:
            raise ConfigError(f"backend: {self.backend!r} not defined under 'backends'")
        for entry in self.exemplars:
            if not isinstance(entry, dict) or not entry.get("input") or not entry.get("output"):
                raise ConfigError(
                    "exemplars: each entry needs non-empty 'input' and 'output' fields"
                )

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        config = cls(**raw)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(raw)

    def digest(self) -> str:
        """Stable hash of the effective configuration, for run manifests."""
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def style(self) -> PromptStyle:
        return PromptStyle(self.prompt_style)


def resolve_path(value: str | None, base_dir: Path | None) -> str | None:
    if value is None:
        return None
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return str(path)


def build_exemplars(config: PipelineConfig):
    from .prompting import Exemplar

    return tuple(Exemplar(e["input"], e["output"]) for e in config.exemplars)


def build_similarity_provider(config: PipelineConfig) -> SimilarityProvider:
    spec = config.similarity_provider or {"kind": "trigram"}
    kind = spec.get("kind", "trigram")
    if kind == "trigram":
        return TrigramProvider(dim=int(spec.get("dim", 1024)))
    if kind == "remote":
        return RemoteEmbeddingProvider(spec["endpoint"])
    raise ConfigError(f"similarity_provider.kind: unknown kind {kind!r}")


def build_alias_provider(config: PipelineConfig, base_dir: Path | None = None) -> AliasProvider:
    spec = config.alias_provider
    if not spec:
        raise ConfigError("alias_provider: required for note identification")
    kind = spec.get("kind", "file")
    if kind == "file":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return FileAliasProvider(path)
    raise ConfigError(f"alias_provider.kind: unknown kind {kind!r}")


def build_ner_provider(config: PipelineConfig, base_dir: Path | None = None) -> NerProvider:
    spec = config.ner_provider or {"kind": "none"}
    kind = spec.get("kind", "none")
    if kind == "none":
        return NullNerProvider()
    if kind == "scripted":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ScriptedNerProvider(path)
    if kind == "remote":
        return RemoteNerProvider(spec["endpoint"])
    raise ConfigError(f"ner_provider.kind: unknown kind {kind!r}")


def build_backend(
    config: PipelineConfig, name: str | None = None, base_dir: Path | None = None
) -> ModelBackend:
    name = name or config.backend
    if not name:
        raise ConfigError("backend: no backend selected")
    spec = config.backends.get(name)
    if spec is None:
        raise ConfigError(f"backend: {name!r} not defined under 'backends'")
    kind = spec.get("kind")
    if kind == "generative":
        return HttpGenerativeBackend(
            name,
            spec["endpoint"],
            max_tokens=int(spec.get("max_tokens", 256)),
            temperature=float(spec.get("temperature", 0.0)),
        )
    if kind == "extractive_qa":
        return HttpQaBackend(name, spec["endpoint"], top_k=config.top_k)
    if kind in ("scripted", "scripted_qa"):
        path = Path(spec["script"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        backend_kind = (
            BackendKind.EXTRACTIVE_QA if kind == "scripted_qa" else BackendKind.GENERATIVE
        )
        return ScriptedBackend(name, backend_kind, path)
    raise ConfigError(f"backends.{name}.kind: unknown kind {kind!r}")
