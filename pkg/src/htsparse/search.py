"""Top-k retrieval: exhaustive oracle and MaxScore dynamic pruning.

Both paths score with the same stored weights and add a document's term
contributions in ascending token order, so their scores are bit-identical.
Hits are ordered by score descending, then document ordinal ascending.
"""

from __future__ import annotations

import heapq
import math
import time
from bisect import bisect_left
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index import InvertedIndex
from .io import atomic_write_text
from .thresholds import soft
from .vectors import SparseVector

# relative slack on pruning bounds; pruning less is always safe
_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class PreparedQuery:
    tokens: tuple
    weights: tuple
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ScoredDoc:
    ordinal: int
    doc_id: str
    score: float


@dataclass(frozen=True)
class TopKResult:
    hits: list
    postings_scored: int
    elapsed: float = 0.0


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p99_ms: float
    n: int


def prepare_query(v: SparseVector, t_Q: float = 0.0, index: InvertedIndex | None = None) -> PreparedQuery:
    """Soft-threshold query weights; optionally drop terms the index lacks."""
    if t_Q < 0:
        raise ValueError("t_Q must be >= 0")
    w = soft(v.weights, t_Q)
    keep = w > 0
    if index is not None:
        keep &= np.fromiter((int(t) in index.lists for t in v.tokens), bool, len(v))
    return PreparedQuery(tuple(int(t) for t in v.tokens[keep]), tuple(float(x) for x in w[keep]), v.owner_id)


def _terms(index: InvertedIndex, q: PreparedQuery):
    return [(t, w, index.lists[t]) for t, w in zip(q.tokens, q.weights) if t in index.lists]


def _rank(index: InvertedIndex, ordinals, scores, k: int) -> list:
    order = np.lexsort((ordinals, -scores))[:k]
    return [ScoredDoc(int(ordinals[i]), index.doc_ids[int(ordinals[i])], float(scores[i])) for i in order]


def exhaustive_topk(index: InvertedIndex, q: PreparedQuery, k: int) -> TopKResult:
    """Score every posting of every query term; the reference for MaxScore."""
    if k < 1:
        raise ValueError("k must be >= 1")
    start = time.perf_counter()
    acc = np.zeros(index.doc_count)
    scored = 0
    for _, qw, pl in sorted(_terms(index, q), key=lambda x: x[0]):
        acc[pl.docs] += qw * pl.weights
        scored += len(pl)
    ordinals = np.flatnonzero(acc > 0)
    hits = _rank(index, ordinals, acc[ordinals], k)
    return TopKResult(hits, scored, time.perf_counter() - start)


def maxscore_topk(index: InvertedIndex, q: PreparedQuery, k: int) -> TopKResult:
    """Document-at-a-time MaxScore.

    Terms are ordered by upper bound u = query weight * list maximum. The
    longest prefix whose bounds sum to at most the current k-th score is
    non-essential: candidates come only from the remaining lists, and the
    non-essential lists are probed by skipping, highest bound first, until
    the partial score plus the remaining bounds cannot beat the threshold.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    start = time.perf_counter()
    terms = sorted(_terms(index, q), key=lambda x: (x[1] * x[2].max_weight, x[0]))
    n = len(terms)
    if n == 0:
        return TopKResult([], 0, time.perf_counter() - start)
    toks = [t for t, _, _ in terms]
    qws = [w for _, w, _ in terms]
    docs = [pl.docs.tolist() for _, _, pl in terms]
    wts = [pl.weights.tolist() for _, _, pl in terms]
    lens = [len(d) for d in docs]
    cum = list(np.cumsum([w * pl.max_weight for _, w, pl in terms]))
    pos = [0] * n
    end = math.inf

    heap: list = []  # (score, -ordinal): heap[0] is the weakest hit
    theta = 0.0
    first_essential = 0
    scored = 0

    while first_essential < n:
        cur = end
        for i in range(first_essential, n):
            if pos[i] < lens[i] and docs[i][pos[i]] < cur:
                cur = docs[i][pos[i]]
        if cur is end:
            break

        contrib = {}
        partial = 0.0
        for i in range(first_essential, n):
            p = pos[i]
            if p < lens[i] and docs[i][p] == cur:
                c = qws[i] * wts[i][p]
                contrib[toks[i]] = c
                partial += c
                pos[i] = p + 1
                scored += 1

        pruned = False
        for i in range(first_essential - 1, -1, -1):
            if (partial + cum[i]) * (1 + _BOUND_SLACK) <= theta:
                pruned = True
                break
            p = bisect_left(docs[i], cur, pos[i])
            pos[i] = p
            if p < lens[i] and docs[i][p] == cur:
                c = qws[i] * wts[i][p]
                contrib[toks[i]] = c
                partial += c
                scored += 1
        if pruned:
            continue

        score = 0.0
        for t in sorted(contrib):
            score += contrib[t]
        if score <= 0:
            continue
        entry = (score, -cur)
        if len(heap) < k:
            heapq.heappush(heap, entry)
        elif entry > heap[0]:
            heapq.heapreplace(heap, entry)
        else:
            continue
        if len(heap) == k:
            theta = heap[0][0]
            while first_essential < n and cum[first_essential] * (1 + _BOUND_SLACK) <= theta:
                first_essential += 1

    ranked = sorted(heap, key=lambda e: (-e[0], -e[1]))
    hits = [ScoredDoc(-o, index.doc_ids[-o], s) for s, o in ranked]
    return TopKResult(hits, scored, time.perf_counter() - start)


ALGORITHMS = {"maxscore": maxscore_topk, "exhaustive": exhaustive_topk}


def latency_stats(seconds: Sequence[float]) -> LatencyStats:
    """Mean and nearest-rank 99th percentile, in milliseconds."""
    if not seconds:
        return LatencyStats(0.0, 0.0, 0)
    ms = sorted(s * 1000.0 for s in seconds)
    rank = math.ceil(0.99 * len(ms))
    return LatencyStats(float(np.mean(ms)), ms[rank - 1], len(ms))


def batch_search(index: InvertedIndex, queries: Sequence[SparseVector], k: int, t_Q: float = 0.0,
                 algo: str = "maxscore"):
    """Search each query; only the traversal itself is timed."""
    fn = ALGORITHMS[algo]
    prepared = [prepare_query(v, t_Q, index) for v in queries]
    results = [fn(index, pq, k) for pq in prepared]
    return results, latency_stats([r.elapsed for r in results])


# --- TREC run files -------------------------------------------------------------

def format_run(query_ids: Sequence[str], results: Sequence[TopKResult], tag: str = "htsparse") -> str:
    lines = []
    for qid, res in zip(query_ids, results):
        for rank, hit in enumerate(res.hits, 1):
            lines.append(f"{qid} Q0 {hit.doc_id} {rank} {hit.score:.6f} {tag}\n")
    return "".join(lines)


def write_run(path, query_ids, results, tag: str = "htsparse") -> None:
    atomic_write_text(path, format_run(query_ids, results, tag))
