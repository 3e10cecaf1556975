"""Synthetic Zipfian corpus with planted topical relevance.

Every document and query gets a latent topic mixture. Tokens are drawn
from a background Zipf distribution over the vocabulary or from one of
the topics, each topic being the same Zipf law over its own random
permutation of the vocabulary. Relevance is the cosine similarity of
topic mixtures. It sets both the graded qrels and the teacher margins
used for distillation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import atomic_write_text
from .metrics import Qrels, format_qrels
from .vectors import Collection, SparseVector, vector_to_json

# cosine affinity cut points for grades 1, 2, 3
GRADE_CUTS = (0.6, 0.8, 0.95)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_docs: int = 1000
    n_queries: int = 100
    vocab: int = 5000
    zipf_s: float = 1.1
    topics: int = 20
    doc_len: int = 80
    query_len: int = 6
    background: float = 0.4
    query_background: float = 0.1
    topic_alpha: float = 0.1
    triples_per_query: int = 10
    margin_scale: float = 3.0
    weight_scale: float = 1.5


@dataclass
class SynthData:
    docs: Collection
    queries: Collection
    qrels: Qrels
    triples: list
    affinity: np.ndarray  # queries x docs


def zipf_probs(n: int, s: float) -> np.ndarray:
    p = np.arange(1, n + 1, dtype=np.float64) ** -s
    return p / p.sum()


def _grade(a: float) -> int:
    return sum(a >= c for c in GRADE_CUTS)


def _draw_mixture(rng, n, topics, alpha):
    theta = rng.dirichlet(np.full(topics, alpha), size=n)
    # guard against all-zero rows from underflow at tiny alpha
    theta[theta.sum(axis=1) == 0, 0] = 1.0
    return theta / theta.sum(axis=1, keepdims=True)


def _sample_tokens(rng, theta, length, background, base, perms):
    n_bg = rng.binomial(length, background)
    toks = [rng.choice(base.size, size=n_bg, p=base)]
    topic_of = rng.choice(theta.size, size=length - n_bg, p=theta)
    for t in np.unique(topic_of):
        ranks = rng.choice(base.size, size=int(np.sum(topic_of == t)), p=base)
        toks.append(perms[t][ranks])
    return np.concatenate(toks)


def _to_vector(tokens, idf, owner_id) -> SparseVector:
    uniq, tf = np.unique(tokens, return_counts=True)
    return SparseVector(uniq, np.log1p(tf) * idf[uniq], owner_id)


def synth_corpus(cfg: SynthConfig = SynthConfig()) -> SynthData:
    """Generate docs, queries, qrels and training triples; deterministic per seed."""
    if cfg.n_docs < 1 or cfg.n_queries < 1:
        raise ValueError("need at least one document and one query")
    rng = np.random.default_rng(cfg.seed)
    base = zipf_probs(cfg.vocab, cfg.zipf_s)
    perms = [rng.permutation(cfg.vocab) for _ in range(cfg.topics)]

    doc_theta = _draw_mixture(rng, cfg.n_docs, cfg.topics, cfg.topic_alpha)
    doc_tokens = [
        _sample_tokens(rng, doc_theta[i], max(4, rng.poisson(cfg.doc_len)), cfg.background, base, perms)
        for i in range(cfg.n_docs)
    ]
    q_theta = _draw_mixture(rng, cfg.n_queries, cfg.topics, cfg.topic_alpha)
    q_tokens = [
        _sample_tokens(rng, q_theta[i], max(2, rng.poisson(cfg.query_len)), cfg.query_background, base, perms)
        for i in range(cfg.n_queries)
    ]

    df = np.zeros(cfg.vocab)
    for toks in doc_tokens:
        df[np.unique(toks)] += 1
    idf = cfg.weight_scale * np.log1p(cfg.n_docs / (df + 1.0))

    docs = Collection(tuple(_to_vector(t, idf, f"D{i}") for i, t in enumerate(doc_tokens)), cfg.vocab)
    queries = Collection(tuple(_to_vector(t, idf, f"Q{i}") for i, t in enumerate(q_tokens)), cfg.vocab)

    dn = doc_theta / np.linalg.norm(doc_theta, axis=1, keepdims=True)
    qn = q_theta / np.linalg.norm(q_theta, axis=1, keepdims=True)
    affinity = qn @ dn.T

    qrels: dict = {}
    triples = []
    for qi in range(cfg.n_queries):
        qid = f"Q{qi}"
        grades = {f"D{di}": _grade(a) for di, a in enumerate(affinity[qi]) if _grade(a) > 0}
        if grades:
            qrels[qid] = grades
        order = np.argsort(-affinity[qi], kind="stable")
        relevant = [int(d) for d in order if _grade(affinity[qi, d]) > 0]
        pool = relevant or [int(d) for d in order[:10]]
        for _ in range(cfg.triples_per_query):
            pos = pool[int(rng.integers(len(pool)))]
            neg = int(rng.integers(cfg.n_docs))
            while neg == pos:
                neg = int(rng.integers(cfg.n_docs))
            margin = cfg.margin_scale * float(affinity[qi, pos] - affinity[qi, neg])
            triples.append({"q": qid, "pos": f"D{pos}", "neg": f"D{neg}", "teacher_margin": margin})
    return SynthData(docs, queries, qrels, triples, affinity)


def triples_to_jsonl(triples) -> str:
    return "".join(json.dumps(t, separators=(",", ":")) + "\n" for t in triples)


def read_triples(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append({"q": rec["q"], "pos": rec["pos"], "neg": rec["neg"],
                            "teacher_margin": float(rec["teacher_margin"])})
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed triple ({exc})") from None
    return out


def write_synth(data: SynthData, out_dir) -> dict:
    out = Path(out_dir)
    paths = {
        "docs": out / "docs.jsonl",
        "queries": out / "queries.jsonl",
        "qrels": out / "qrels.txt",
        "triples": out / "triples.jsonl",
    }
    atomic_write_text(paths["docs"], "".join(vector_to_json(v) + "\n" for v in data.docs))
    atomic_write_text(paths["queries"], "".join(vector_to_json(v) + "\n" for v in data.queries))
    atomic_write_text(paths["qrels"], format_qrels(data.qrels))
    atomic_write_text(paths["triples"], triples_to_jsonl(data.triples))
    return paths
