"""HTTP service exposing /embed, /ner, /qa, /generate, and /health.

The app refuses to start when any enabled endpoint's model identifier cannot
be loaded. Request handling is stateless; a counting limiter sheds load with
429 + Retry-After once max_in_flight requests are active.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from .models import (
    ModelLoadError,
    load_embedder,
    load_generator,
    load_ner,
    load_qa,
)


class SidecarError(RuntimeError):
    """Startup-time configuration failure (service must not come up)."""


@dataclass
class SidecarConfig:
    embed_model: str = "trigram-hash-1024"
    ner_model: str = "lexicon"
    qa_model: str = "token-overlap"
    generate_model: str = "guided-qa"
    device: str = "cpu"
    max_in_flight: int = 8
    retry_after_seconds: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "SidecarConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise SidecarError(f"unknown sidecar config field(s): {', '.join(sorted(unknown))}")
        config = cls(**raw)
        if config.device not in ("cpu", "cuda"):
            raise SidecarError(f"device must be cpu or cuda, got {config.device!r}")
        if config.max_in_flight < 0:
            raise SidecarError("max_in_flight must be >= 0")
        return config


class EmbedRequest(BaseModel):
    text: str = Field(min_length=1)


class NerRequest(BaseModel):
    text: str = Field(min_length=1)


class QaRequest(BaseModel):
    question: str = Field(min_length=1)
    context: str = Field(min_length=1)
    top_k: int = Field(ge=1)


class GenerateRequest(BaseModel):
    prompt: str = Field(min_length=1)
    max_tokens: int = Field(ge=1)
    temperature: float = Field(ge=0.0)


class _Limiter:
    def __init__(self, capacity: int):
        self._capacity = capacity
        self._active = 0
        self._lock = threading.Lock()

    @contextmanager
    def slot(self):
        with self._lock:
            if self._active >= self._capacity:
                raise _Overloaded()
            self._active += 1
        try:
            yield
        finally:
            with self._lock:
                self._active -= 1


class _Overloaded(Exception):
    pass


def create_app(config: SidecarConfig | dict | None = None) -> FastAPI:
    """Build the service; raises SidecarError when a model cannot load."""
    if config is None:
        config = SidecarConfig()
    elif isinstance(config, dict):
        config = SidecarConfig.from_dict(config)

    try:
        embedder = load_embedder(config.embed_model)
        ner = load_ner(config.ner_model)
        qa = load_qa(config.qa_model)
        generator = load_generator(config.generate_model)
    except ModelLoadError as exc:
        raise SidecarError(str(exc)) from exc

    app = FastAPI(title="kgsidecar", version="0.1.0")
    limiter = _Limiter(config.max_in_flight)

    @app.exception_handler(_Overloaded)
    async def overloaded_handler(request: Request, exc: _Overloaded) -> Response:
        return Response(
            status_code=429,
            headers={"Retry-After": str(config.retry_after_seconds)},
            content="overloaded",
        )

    @app.post("/embed")
    def embed(payload: EmbedRequest) -> dict:
        with limiter.slot():
            return {"vector": embedder.embed(payload.text)}

    @app.post("/ner")
    def extract(payload: NerRequest) -> dict:
        with limiter.slot():
            spans = ner.extract(payload.text)
            return {
                "spans": [{"text": s.text, "start": s.start, "end": s.end} for s in spans]
            }

    @app.post("/qa")
    def answer(payload: QaRequest) -> dict:
        with limiter.slot():
            answers = qa.answer(payload.question, payload.context, payload.top_k)
            for text, _ in answers:
                if text not in payload.context:  # open-book contract
                    raise HTTPException(500, "qa model produced a non-substring answer")
            return {"answers": [{"text": t, "score": s} for t, s in answers]}

    @app.post("/generate")
    def generate(payload: GenerateRequest) -> dict:
        with limiter.slot():
            # deterministic built-ins ignore temperature; accepted for protocol parity
            return {"text": generator.generate(payload.prompt, payload.max_tokens)}

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "models": {
                "embed": embedder.name,
                "ner": ner.name,
                "qa": qa.name,
                "generate": generator.name,
            },
        }

    return app


def serve(config: SidecarConfig | dict | None = None, host: str = "127.0.0.1", port: int = 8800):
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port)
