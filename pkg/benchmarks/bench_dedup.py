#!/usr/bin/env python3
"""Benchmark the duplicate-scan kernel: numba @njit vs pure numpy.

Builds a synthetic corpus with injected copy-forward duplicates, embeds it
with the default trigram provider, and times both kernel paths on the same
embedding matrix. The numba path is also what NOTEKG_NO_NUMBA=1 disables at
runtime.

Usage: python benchmarks/bench_dedup.py [n_notes ...]
"""

from __future__ import annotations

import random
import sys
import time

import numpy as np

from notekg import _kernels
from notekg.similarity import TrigramProvider

VOCABULARY = (
    "armd amd drusen vitamins areds wacs fish spinach diet smoking exam stable "
    "monitor grid followup treatment injection leakage vision macular patient eye "
    "retina fluid laser avastin lucentis eylea pdt omega fatty acids green leafy"
).split()


def synthetic_corpus(n: int, seed: int = 7) -> list[str]:
    rng = random.Random(seed)
    texts = []
    for i in range(n):
        words = [rng.choice(VOCABULARY) for _ in range(rng.randint(8, 60))]
        text = " ".join(words)
        # every sixth note is a copy-forward duplicate of an earlier one
        if i % 6 == 5 and texts:
            base = texts[rng.randrange(len(texts))]
            text = base + " " + base + " follow up scheduled"
        texts.append(text)
    return texts


def embed_all(texts: list[str]) -> np.ndarray:
    provider = TrigramProvider()
    emb = np.stack([provider.embed(t) for t in texts])
    return np.ascontiguousarray(emb)


def run_one(n: int) -> None:
    texts = synthetic_corpus(n)
    emb = embed_all(texts)
    word_counts = np.array([len(t.split()) for t in texts], dtype=np.int64)
    id_ranks = np.arange(n, dtype=np.int64)

    t0 = time.perf_counter()
    keep_py, _, _ = _kernels._greedy_dedup_py(emb, word_counts, id_ranks, 0.8)
    numpy_s = time.perf_counter() - t0

    if _kernels._HAVE_NUMBA:
        _kernels._greedy_dedup_nb(emb[:2], word_counts[:2], id_ranks[:2], 0.8)  # warm jit
        t0 = time.perf_counter()
        keep_nb, _, _ = _kernels._greedy_dedup_nb(emb, word_counts, id_ranks, 0.8)
        numba_s = time.perf_counter() - t0
        agree = bool(np.array_equal(keep_py, keep_nb))
        speedup = numpy_s / numba_s if numba_s > 0 else float("inf")
        print(
            f"n={n:>6}  kept={int(keep_py.sum()):>6}  numpy={numpy_s:8.3f}s  "
            f"numba={numba_s:8.3f}s  speedup={speedup:5.1f}x  agree={agree}"
        )
    else:
        print(
            f"n={n:>6}  kept={int(keep_py.sum()):>6}  numpy={numpy_s:8.3f}s  "
            f"numba=unavailable"
        )


def main() -> None:
    sizes = [int(a) for a in sys.argv[1:]] or [500, 2000, 5000]
    print(f"numba available: {_kernels._HAVE_NUMBA}; enabled: {_kernels.numba_enabled()}")
    for n in sizes:
        run_one(n)


if __name__ == "__main__":
    main()
