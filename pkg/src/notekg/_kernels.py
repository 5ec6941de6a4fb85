"""Hot numeric kernels for pairwise-similarity work.

The O(n^2) near-duplicate scan is the one compute-bound inner loop in the
pipeline, so it lives here in two builds: a numba @njit version and a pure
numpy twin. The numba build is used when numba imports cleanly and the
NOTEKG_NO_NUMBA environment variable is unset; both builds run the same
greedy schedule, so survivor decisions agree (dot products can differ in the
last ulp between BLAS and the jit loop, which only matters for similarities
exactly at the threshold). benchmarks/bench_dedup.py compares the two paths.

Embedding rows passed to these kernels must already be L2-normalized.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # numba is an optional extra
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    """True when the jit kernels are available and not disabled via env flag."""
    return _HAVE_NUMBA and os.environ.get("NOTEKG_NO_NUMBA", "") not in ("1", "true", "yes")


def _greedy_dedup_py(emb, word_counts, id_ranks, threshold):
    n = emb.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    dropped_by = np.full(n, -1, dtype=np.int64)
    drop_sim = np.zeros(n, dtype=np.float64)
    for i in range(n):
        if not keep[i]:
            continue
        js = np.nonzero(keep[i + 1 :])[0] + i + 1
        if js.size == 0:
            continue
        sims = emb[js] @ emb[i]
        for k in range(js.size):
            s = sims[k]
            if s <= threshold:
                continue
            j = int(js[k])
            if word_counts[j] > word_counts[i] or (
                word_counts[j] == word_counts[i] and id_ranks[j] < id_ranks[i]
            ):
                keep[i] = False
                dropped_by[i] = j
                drop_sim[i] = s
                break
            keep[j] = False
            dropped_by[j] = i
            drop_sim[j] = s
    return keep, dropped_by, drop_sim


def _pairwise_cosine_py(emb):
    out = emb @ emb.T
    np.clip(out, -1.0, 1.0, out=out)
    return out


if _HAVE_NUMBA:

    @njit(cache=True)
    def _greedy_dedup_nb(emb, word_counts, id_ranks, threshold):  # pragma: no cover - jit
        n, d = emb.shape
        keep = np.ones(n, dtype=np.bool_)
        dropped_by = np.full(n, -1, dtype=np.int64)
        drop_sim = np.zeros(n, dtype=np.float64)
        for i in range(n):
            if not keep[i]:
                continue
            for j in range(i + 1, n):
                if not keep[j]:
                    continue
                s = 0.0
                for k in range(d):
                    s += emb[i, k] * emb[j, k]
                if s <= threshold:
                    continue
                if word_counts[j] > word_counts[i] or (
                    word_counts[j] == word_counts[i] and id_ranks[j] < id_ranks[i]
                ):
                    keep[i] = False
                    dropped_by[i] = j
                    drop_sim[i] = s
                    break
                keep[j] = False
                dropped_by[j] = i
                drop_sim[j] = s
        return keep, dropped_by, drop_sim

    @njit(cache=True)
    def _pairwise_cosine_nb(emb):  # pragma: no cover - jit
        n, d = emb.shape
        out = np.empty((n, n), dtype=np.float64)
        for i in range(n):
            out[i, i] = 1.0
            for j in range(i + 1, n):
                s = 0.0
                for k in range(d):
                    s += emb[i, k] * emb[j, k]
                if s > 1.0:
                    s = 1.0
                elif s < -1.0:
                    s = -1.0
                out[i, j] = s
                out[j, i] = s
        return out


def greedy_dedup(emb, word_counts, id_ranks, threshold):
    """Greedy in-order duplicate scan over unit-norm embedding rows.

    Pairs are compared in ingestion order; when a pair's cosine exceeds
    ``threshold`` the member with the lower word count is dropped (ties go to
    the lexicographically larger id, encoded in ``id_ranks``), and dropped
    rows leave all later comparisons. Returns (keep, dropped_by, drop_sim)
    where ``dropped_by[i]`` is the surviving partner's row index (-1 if kept).
    """
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    word_counts = np.ascontiguousarray(word_counts, dtype=np.int64)
    id_ranks = np.ascontiguousarray(id_ranks, dtype=np.int64)
    if numba_enabled():
        return _greedy_dedup_nb(emb, word_counts, id_ranks, float(threshold))
    return _greedy_dedup_py(emb, word_counts, id_ranks, float(threshold))


def pairwise_cosine(emb):
    """Full cosine matrix of unit-norm embedding rows, clipped to [-1, 1]."""
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    if numba_enabled():
        return _pairwise_cosine_nb(emb)
    return _pairwise_cosine_py(emb)
