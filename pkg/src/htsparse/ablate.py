"""Design-option ablation grid on the synthetic corpus.

A grid file (TOML) names the corpus, shared training settings and a list
of runs. Each run fixes the training-time thresholding per side, the
document index-time function, K and optional regularizer overrides::

    [[run]]
    name = "S[Q],HH[D] K=25"
    query = "soft"          # phi | soft | sigmoid (sigmoid -> hard at search)
    doc = "sigmoid"         # phi | soft | sigmoid
    doc_index = "hard"      # phi | soft | sigmoid | hard
    K = 25
    lambda_Q = 0.0          # optional overrides

Runs that differ only in doc_index share one training run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .experiment import evaluate, index_documents, query_vectors
from .synth import SynthConfig, synth_corpus
from .thresholds import ThresholdConfig, Thresholding
from .trainer import TrainOptions, inference_fn, make_triples, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationRun:
    name: str
    query: str = "soft"
    doc: str = "sigmoid"
    doc_index: str | None = None
    K: float = 25.0
    lambda_Q: float | None = None
    lambda_D: float | None = None
    lambda_T: float | None = None


@dataclass(frozen=True)
class AblationRow:
    name: str
    mrr: float
    mrt10: float
    p99_10: float
    mrt1000: float
    p99_1000: float
    qlen: float
    dlen: float
    postings: int
    t_D: float
    t_Q: float


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from None


def _pick(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**table)


def run_grid(config: dict) -> list:
    corpus = _pick(SynthConfig, config.get("corpus", {}), "[corpus]")
    train_tbl = dict(config.get("train", {}))
    base_lambdas = {k: train_tbl.pop(k) for k in ("lambda_Q", "lambda_D", "lambda_T") if k in train_tbl}
    options = _pick(TrainOptions, train_tbl, "[train]")
    idx_tbl = config.get("index", {})
    bits = int(idx_tbl.get("bits", 8))
    runs = [_pick(AblationRun, r, f"[[run]] #{i + 1}") for i, r in enumerate(config.get("run", []))]
    if not runs:
        raise ValueError("grid has no [[run]] entries")

    data = synth_corpus(corpus)
    triples = make_triples(data.docs, data.queries, data.triples)
    trained = {}
    rows = []
    for run in runs:
        lambdas = dict(base_lambdas)
        for k in ("lambda_Q", "lambda_D", "lambda_T"):
            if getattr(run, k) is not None:
                lambdas[k] = getattr(run, k)
        cfg = ThresholdConfig(K=run.K, query_fn=run.query, doc_fn=run.doc, **lambdas)
        key = (cfg.query_fn, cfg.doc_fn, cfg.K, cfg.lambda_Q, cfg.lambda_D, cfg.lambda_T)
        if key not in trained:
            log.info("training %s", run.name)
            trained[key] = train(data.docs, data.queries, triples, cfg, options)[0]
        state = trained[key]
        doc_index = Thresholding(run.doc_index) if run.doc_index else inference_fn(run.doc)
        index = index_documents(state.params, data.docs, doc_index, state.t_D, run.K, bits)
        qvecs, t_q = query_vectors(state.params, data.queries, run.query, state.t_Q)
        at10 = evaluate(index, qvecs, t_q, data.qrels, k=10)
        at1000 = evaluate(index, qvecs, t_q, data.qrels, k=1000, byte_size=at10.report.index_bytes)
        rep, lat = at10.report, at1000.report.latency
        rows.append(AblationRow(
            run.name, rep.mrr_at_10, rep.latency.mean_ms, rep.latency.p99_ms, lat.mean_ms, lat.p99_ms,
            rep.mean_qlen, rep.mean_dlen, index.postings_count, state.t_D, state.t_Q,
        ))
    return rows


def format_table(rows) -> str:
    header = f"{'config':<28} {'MRR@10':>7} {'MRT10(P99)':>15} {'MRT1000(P99)':>15} {'Qlen':>6} {'Dlen':>7} {'postings':>9} {'t_D':>6} {'t_Q':>6}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.name:<28} {r.mrr:>7.4f} {f'{r.mrt10:.2f}({r.p99_10:.2f})':>15} "
            f"{f'{r.mrt1000:.2f}({r.p99_1000:.2f})':>15} {r.qlen:>6.2f} {r.dlen:>7.2f} {r.postings:>9d} "
            f"{r.t_D:>6.3f} {r.t_Q:>6.3f}"
        )
    return "\n".join(lines)
