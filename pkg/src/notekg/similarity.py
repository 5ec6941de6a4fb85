"""Text similarity: embedding providers and cosine scoring.

Every cosine-similarity use in the pipeline (near-duplicate removal, disease
note identification, prediction grouping, evaluation matching) goes through
the provider contract defined here. The built-in provider is deterministic
and dependency-free; deployments that want a learned embedding point the
remote provider at a serving endpoint instead.
"""

from __future__ import annotations

import re
import zlib
from abc import ABC, abstractmethod

import numpy as np

__all__ = [
    "SimilarityError",
    "ProviderError",
    "SimilarityProvider",
    "TrigramProvider",
    "RemoteEmbeddingProvider",
    "cosine",
    "similarity",
]

#: Embedding width of the built-in provider. Collisions under the hashing
#: trick are tolerable here; what matters is that the mapping is fixed.
DEFAULT_DIM = 1024

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


class SimilarityError(ValueError):
    """Degenerate similarity input: empty text, zero vector, length mismatch."""


class ProviderError(RuntimeError):
    """A provider call failed; the message carries the provider name."""


def cosine(u, v) -> float:
    """Cosine of two equal-length vectors: dot(u, v) / (|u| * |v|).

    Raises SimilarityError on a length mismatch or an all-zero vector (a zero
    vector signals degenerate or empty text upstream).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise SimilarityError(f"vector length mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise SimilarityError("zero vector (degenerate or empty text)")
    return float(np.dot(u, v) / (nu * nv))


class SimilarityProvider(ABC):
    """Embeds text into fixed-width vectors; must be safe for concurrent reads."""

    name: str = "provider"

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Return the embedding vector for ``text``."""

    def similarity(self, a: str, b: str) -> float:
        """cosine(embed(a), embed(b)); symmetric in (a, b)."""
        if not a.strip() or not b.strip():
            raise SimilarityError("similarity of empty text is undefined")
        return cosine(self.embed(a), self.embed(b))


def similarity(provider: SimilarityProvider, a: str, b: str) -> float:
    """Similarity of two texts under ``provider`` (see SimilarityProvider.similarity)."""
    return provider.similarity(a, b)


def _token_trigrams(text: str):
    # Tokens are padded with one space each side before trigram extraction,
    # which makes the bag order-insensitive across tokens and guarantees at
    # least one trigram per non-empty token.
    for token in _NON_ALNUM.sub(" ", text.lower()).split():
        padded = f" {token} "
        for i in range(len(padded) - 2):
            yield padded[i : i + 3]


class TrigramProvider(SimilarityProvider):
    """L2-normalized term-frequency vector over per-token character trigrams.

    Text is lowercased and punctuation-stripped first. Trigrams are mapped to
    a fixed width with crc32 hashing, so identical text always produces the
    identical vector and components are nonnegative (similarities land in
    [0, 1]).
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("embedding dim must be positive")
        self.dim = dim
        self.name = f"trigram-{dim}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in _token_trigrams(text):
            vec[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0.0:
            vec /= norm
        return vec


class RemoteEmbeddingProvider(SimilarityProvider):
    """Client for the sidecar /embed protocol: {"text": ...} -> {"vector": [...]}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.name = f"remote-embed:{self.endpoint}"

    def embed(self, text: str) -> np.ndarray:
        import requests

        try:
            resp = requests.post(
                f"{self.endpoint}/embed", json={"text": text}, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:
            raise ProviderError(f"{self.name}: embed request failed: {exc}") from exc
        vector = payload.get("vector")
        if not isinstance(vector, list) or not vector:
            raise ProviderError(f"{self.name}: malformed /embed response")
        return np.asarray(vector, dtype=np.float64)
