"""Glue between trained encoders, index construction, search and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import index as ix
from .metrics import EvalReport, mrr_at_k, ndcg_at_k
from .search import batch_search
from .thresholds import Thresholding, apply_thresholding
from .trainer import ToyEncoderParams, encode_collection, inference_fn
from .vectors import Collection


def index_documents(params: ToyEncoderParams, docs: Collection, doc_index_fn, t_D: float, K: float,
                    bits: int = 0) -> ix.InvertedIndex:
    """Encode documents and index them under the given index-time thresholding.

    `hard` goes through the HT sparsify mode; `sigmoid` and `soft` keep
    transformed weights, the former being the train-time function reused
    at index time.
    """
    encoded = encode_collection(params, docs)
    fn = Thresholding(doc_index_fn)
    if fn is Thresholding.HARD:
        return ix.build(Collection(tuple(encoded), docs.vocab_size), ix.SparsifyMode("ht", t_D), bits)
    if fn is not Thresholding.PHI:
        encoded = [apply_thresholding(v, fn, t_D, K) for v in encoded]
    return ix.build(Collection(tuple(encoded), docs.vocab_size), ix.SparsifyMode(), bits)


def query_vectors(params: ToyEncoderParams, queries: Collection, query_train_fn, t_Q: float):
    """Encoded queries plus the soft threshold still to apply at search time."""
    encoded = encode_collection(params, queries)
    fn = inference_fn(query_train_fn)
    if fn is Thresholding.SOFT:
        return encoded, t_Q
    if fn is Thresholding.HARD:
        return [apply_thresholding(v, fn, t_Q) for v in encoded], 0.0
    return encoded, 0.0


@dataclass(frozen=True)
class RunOutcome:
    report: EvalReport
    postings_scored: int
    run: dict
    results: list


def evaluate(index: ix.InvertedIndex, queries, t_Q: float, qrels, k: int = 10, algo: str = "maxscore",
             byte_size: int | None = None) -> RunOutcome:
    results, latency = batch_search(index, queries, k, t_Q, algo)
    run = {q.owner_id: [h.doc_id for h in r.hits] for q, r in zip(queries, results)}
    qlen = float(np.mean([np.count_nonzero(v.weights > t_Q) for v in queries])) if queries else 0.0
    stats = ix.index_stats(index, byte_size)
    report = EvalReport(
        mrr_at_10=mrr_at_k(run, qrels, 10),
        ndcg_at_10=ndcg_at_k(run, qrels, 10),
        latency=latency,
        mean_dlen=stats.mean_dlen,
        mean_qlen=qlen,
        index_bytes=stats.byte_size,
    )
    return RunOutcome(report, sum(r.postings_scored for r in results), run, results)
