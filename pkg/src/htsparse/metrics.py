"""MRR@k and nDCG@k over TREC-style runs and qrels."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass

from .io import atomic_write_text
from .search import LatencyStats


class EvalError(ValueError):
    pass


# qid -> {docid: grade}
Qrels = dict
# qid -> [docid, ...] in rank order
Run = dict


def read_qrels(path) -> Qrels:
    qrels: dict = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise EvalError(f"{path}:{lineno}: expected 'qid 0 docid grade'")
            qid, _, docid, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise EvalError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise EvalError(f"{path}:{lineno}: negative grade")
            qrels[qid][docid] = g
    return dict(qrels)


def format_qrels(qrels: Qrels) -> str:
    return "".join(
        f"{qid} 0 {docid} {grade}\n" for qid in qrels for docid, grade in qrels[qid].items()
    )


def write_qrels(qrels: Qrels, path) -> None:
    atomic_write_text(path, format_qrels(qrels))


def read_run(path) -> Run:
    """Parse `qid Q0 docid rank score tag` into docids ordered by rank."""
    rows: dict = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise EvalError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, docid, rank, score, _ = parts
            try:
                rows[qid].append((int(rank), -float(score), docid))
            except ValueError:
                raise EvalError(f"{path}:{lineno}: bad rank or score") from None
    return {qid: [d for _, _, d in sorted(r)] for qid, r in rows.items()}


def _judged_queries(qrels: Qrels):
    return [qid for qid, docs in qrels.items() if any(g >= 1 for g in docs.values())]


def mrr_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """Mean reciprocal rank of the first doc with grade >= 1 within the top k.

    Queries without any relevant judgment are left out of the mean; judged
    queries missing from the run count as 0.
    """
    qids = _judged_queries(qrels)
    if not qids:
        raise EvalError("no judged queries")
    total = 0.0
    for qid in qids:
        judged = qrels[qid]
        for rank, docid in enumerate(run.get(qid, [])[:k], 1):
            if judged.get(docid, 0) >= 1:
                total += 1.0 / rank
                break
    return total / len(qids)


def dcg(grades) -> float:
    return sum((2.0**g - 1.0) / math.log2(r + 1) for r, g in enumerate(grades, 1))


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """nDCG with exponential gain 2^grade - 1; queries with IDCG = 0 excluded."""
    scores = []
    for qid, judged in qrels.items():
        ideal = dcg(sorted(judged.values(), reverse=True)[:k])
        if ideal <= 0:
            continue
        got = dcg(judged.get(d, 0) for d in run.get(qid, [])[:k])
        scores.append(got / ideal)
    if not scores:
        raise EvalError("no judged queries")
    return sum(scores) / len(scores)


@dataclass(frozen=True)
class EvalReport:
    mrr_at_10: float
    ndcg_at_10: float
    latency: LatencyStats
    mean_dlen: float
    mean_qlen: float
    index_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("MRR@10", f"{self.mrr_at_10:.4f}"),
            ("nDCG@10", f"{self.ndcg_at_10:.4f}"),
            ("MRT (ms)", f"{self.latency.mean_ms:.3f}"),
            ("P99 (ms)", f"{self.latency.p99_ms:.3f}"),
            ("Dlen", f"{self.mean_dlen:.2f}"),
            ("Qlen", f"{self.mean_qlen:.2f}"),
            ("index bytes", str(self.index_bytes)),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)
