"""Command-line entry point: synth, train, build, search, eval, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import index as ix
from .ablate import format_table, load_config, run_grid
from .experiment import query_vectors
from .io import atomic_write_text
from .metrics import EvalError, EvalReport, mrr_at_k, ndcg_at_k, read_qrels, read_run
from .search import ALGORITHMS, LatencyStats, batch_search, write_run
from .synth import SynthConfig, read_triples, synth_corpus, write_synth
from .thresholds import ThresholdConfig
from .trainer import (
    TrainingDiverged,
    TrainOptions,
    encode_collection,
    load_checkpoint,
    make_triples,
    save_checkpoint,
    train,
    write_trace,
)
from .vectors import DEFAULT_VOCAB_SIZE, Collection, VectorError, read_vectors

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3

log = logging.getLogger("htsparse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"file not found: {path}")
    return p


def _mode(text: str) -> str:
    if text.strip().lower() == "ht:auto":
        return "ht:auto"
    try:
        ix.SparsifyMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _stats_path(run_path: Path) -> Path:
    return run_path.with_name(run_path.name + ".stats.json")


# --- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed, n_docs=args.docs, n_queries=args.queries, vocab=args.vocab,
        zipf_s=args.zipf, topics=args.topics, margin_scale=args.margin_scale,
    )
    paths = write_synth(synth_corpus(cfg), args.out_dir)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_train(args) -> int:
    docs = read_vectors(args.docs, args.vocab)
    queries = read_vectors(args.queries, args.vocab)
    triples = make_triples(docs, queries, read_triples(args.triples))
    cfg = ThresholdConfig(
        K=args.k_steepness, lambda_Q=args.lambda_q, lambda_D=args.lambda_d, lambda_T=args.lambda_t,
        query_fn=args.query_fn, doc_fn=args.doc_fn,
    )
    opts = TrainOptions(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    state, traces = train(docs, queries, triples, cfg, opts)
    save_checkpoint(state, cfg, args.out)
    if args.trace:
        write_trace(traces, args.trace)
    last = traces[-1]
    print(f"t_D={state.t_D:.4f} t_Q={state.t_Q:.4f} dlen={last.mean_dlen:.2f} qlen={last.mean_qlen:.2f}")
    return 0


def cmd_build(args) -> int:
    docs = read_vectors(args.docs, args.vocab)
    state = None
    if args.checkpoint:
        state, _ = load_checkpoint(args.checkpoint)
        docs = Collection(tuple(encode_collection(state.params, docs)), state.params.vocab_size)
    if args.mode == "ht:auto":
        if state is None:
            raise UsageError("--mode ht:auto needs --checkpoint to read the learned t_D")
        mode = ix.SparsifyMode("ht", state.t_D)
    else:
        mode = ix.SparsifyMode.parse(args.mode)
    index = ix.build(docs, mode, args.bits, workers=args.workers)
    size = ix.write(index, args.out)
    st = ix.index_stats(index, size)
    print(f"mode={mode} docs={st.doc_count} postings={st.postings} mean_dlen={st.mean_dlen:.2f} bytes={st.byte_size}")
    return 0


def cmd_search(args) -> int:
    index = ix.read(args.index)
    queries = read_vectors(args.queries, index.vocab_size)
    t_q = args.t_q
    vectors = list(queries)
    if args.checkpoint:
        state, cfg = load_checkpoint(args.checkpoint)
        learned_t = state.t_Q
        vectors, learned_t = query_vectors(state.params, queries, cfg.query_fn, learned_t)
        if t_q is None:
            t_q = learned_t
    if t_q is None:
        t_q = 0.0
    results, latency = batch_search(index, vectors, args.k, t_q, args.algo)
    write_run(args.run_out, [v.owner_id for v in vectors], results, args.tag)
    qlen = sum(int((v.weights > t_q).sum()) for v in vectors) / max(1, len(vectors))
    stats = {
        "latency": asdict(latency),
        "postings_scored": sum(r.postings_scored for r in results),
        "mean_qlen": qlen,
        "mean_dlen": ix.index_stats(index, 0).mean_dlen,
        "index_bytes": Path(args.index).stat().st_size,
    }
    atomic_write_text(_stats_path(Path(args.run_out)), json.dumps(stats, indent=2))
    print(f"queries={len(vectors)} MRT={latency.mean_ms:.3f}ms P99={latency.p99_ms:.3f}ms "
          f"postings_scored={stats['postings_scored']}")
    return 0


def cmd_eval(args) -> int:
    run = read_run(args.run)
    qrels = read_qrels(args.qrels)
    stats_file = Path(args.stats) if args.stats else _stats_path(Path(args.run))
    extra = json.loads(stats_file.read_text()) if stats_file.is_file() else {}
    report = EvalReport(
        mrr_at_10=mrr_at_k(run, qrels, args.k),
        ndcg_at_10=ndcg_at_k(run, qrels, args.k),
        latency=LatencyStats(**extra.get("latency", {"mean_ms": 0.0, "p99_ms": 0.0, "n": 0})),
        mean_dlen=float(extra.get("mean_dlen", 0.0)),
        mean_qlen=float(extra.get("mean_qlen", 0.0)),
        index_bytes=int(extra.get("index_bytes", 0)),
    )
    print(report.table())
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    rows = run_grid(load_config(args.config))
    print(format_table(rows))
    if args.json:
        atomic_write_text(args.json, json.dumps([asdict(r) for r in rows], indent=2))
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htsparse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus with planted relevance")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--docs", type=int, default=1000)
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--vocab", type=int, default=5000)
    s.add_argument("--zipf", type=float, default=1.1)
    s.add_argument("--topics", type=int, default=20)
    s.add_argument("--margin-scale", type=float, default=SynthConfig.margin_scale)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="jointly train thresholds and the toy encoder")
    t.add_argument("--docs", type=_existing, required=True)
    t.add_argument("--queries", type=_existing, required=True)
    t.add_argument("--triples", type=_existing, required=True)
    t.add_argument("--vocab", type=int, default=DEFAULT_VOCAB_SIZE)
    t.add_argument("--lambda-q", type=float, default=0.01)
    t.add_argument("--lambda-d", type=float, default=0.008)
    t.add_argument("--lambda-t", type=float, default=1.0)
    t.add_argument("--k-steepness", type=float, default=25.0)
    t.add_argument("--query-fn", choices=["phi", "soft", "sigmoid"], default="soft")
    t.add_argument("--doc-fn", choices=["phi", "soft", "sigmoid"], default="sigmoid")
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint JSON")
    t.add_argument("--trace", help="per-epoch trace CSV")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("build", help="sparsify documents and write an index")
    b.add_argument("--docs", type=_existing, required=True)
    b.add_argument("--vocab", type=int, default=DEFAULT_VOCAB_SIZE)
    b.add_argument("--mode", type=_mode, default="none", help="ht:T | cut:T | topk:K | dcp:F | none | ht:auto")
    b.add_argument("--bits", type=int, choices=[0, 8, 16], default=0)
    b.add_argument("--checkpoint", type=_existing, help="encode documents with a trained encoder first")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("search", help="run top-k retrieval and write a TREC run file")
    q.add_argument("--index", type=_existing, required=True)
    q.add_argument("--queries", type=_existing, required=True)
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--t-q", type=float, default=None, help="soft query threshold (default: checkpoint's, else 0)")
    q.add_argument("--checkpoint", type=_existing, help="encode queries with a trained encoder first")
    q.add_argument("--algo", choices=sorted(ALGORITHMS), default="maxscore")
    q.add_argument("--tag", default="htsparse")
    q.add_argument("--run-out", required=True)
    q.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="score a run file against qrels")
    e.add_argument("--run", type=_existing, required=True)
    e.add_argument("--qrels", type=_existing, required=True)
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--stats", help="search stats JSON (default: <run>.stats.json if present)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a design-option ablation grid")
    a.add_argument("--config", type=_existing, required=True)
    a.add_argument("--json", help="also write rows as JSON")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "k", 1) < 1:
        parser.error("--k must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"htsparse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"htsparse: training {exc}; lower --lr or --k-steepness", file=sys.stderr)
        return EXIT_DIVERGED
    except (VectorError, EvalError, ix.IndexFileError, ix.EmptyIndex, ValueError, OSError) as exc:
        print(f"htsparse: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
