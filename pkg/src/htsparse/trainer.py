"""Joint training of thresholds and a toy per-token encoder.

The encoder maps a raw sparse input x to w_j = log(1 + relu(a_j * x_j + b_j)),
a desk-scale stand-in for a transformer whose only trainable surface is
one affine pair per vocabulary entry. Queries and documents share the
encoder. Ranking uses thresholded weights: soft thresholding on queries,
sigmoid thresholding on documents (configurable per side).

Loss per batch B of (query, positive, negative, teacher margin) triples::

    L = mean_B (margin - teacher)^2 + lam_Q * L_Q + lam_D * L_D + lam_T * L_T

with L_Q the summed batch-mean query weight, L_D the FLOPS term over the
2|B| documents of the batch, and L_T = softplus(-t_D) + softplus(-t_Q).
L_Q and L_D read pre-threshold encoder outputs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .io import atomic_write_text
from .thresholds import (
    ThresholdConfig,
    Thresholding,
    sigmoid,
    softplus_neg,
    threshold_grads,
    threshold_values,
)
from .vectors import Collection, SparseVector

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ToyEncoderParams:
    scale: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.scale.shape != self.bias.shape or self.scale.ndim != 1:
            raise ValueError("scale and bias must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.scale)) and np.all(np.isfinite(self.bias))):
            raise ValueError("encoder parameters must be finite")

    @classmethod
    def identity(cls, vocab_size: int) -> "ToyEncoderParams":
        """a = 1, b = 0: the encoder reduces to log1p of the raw weight."""
        return cls(np.ones(vocab_size), np.zeros(vocab_size))

    @property
    def vocab_size(self) -> int:
        return int(self.scale.size)

    def copy(self) -> "ToyEncoderParams":
        return ToyEncoderParams(self.scale.copy(), self.bias.copy())


@dataclass(frozen=True)
class TrainingTriple:
    query_raw: SparseVector
    pos_raw: SparseVector
    neg_raw: SparseVector
    teacher_margin: float

    def __post_init__(self):
        if not math.isfinite(self.teacher_margin):
            raise ValueError("teacher margin must be finite")
        if self.pos_raw.owner_id and self.pos_raw.owner_id == self.neg_raw.owner_id:
            raise ValueError(f"positive and negative are the same document {self.pos_raw.owner_id!r}")


@dataclass
class TrainState:
    params: ToyEncoderParams
    t_D: float = 0.0
    t_Q: float = 0.0
    step: int = 0
    rng_seed: int = 0


@dataclass(frozen=True)
class LossBreakdown:
    l_r: float
    l_q: float
    l_d: float
    l_t: float
    total: float


@dataclass
class Gradients:
    t_D: float
    t_Q: float
    scale: np.ndarray
    bias: np.ndarray

    def is_finite(self) -> bool:
        return (
            math.isfinite(self.t_D)
            and math.isfinite(self.t_Q)
            and bool(np.all(np.isfinite(self.scale)))
            and bool(np.all(np.isfinite(self.bias)))
        )


@dataclass(frozen=True)
class EpochTrace:
    epoch: int
    mean_doc_weight: float
    mean_query_weight: float
    t_D: float
    t_Q: float
    mean_dlen: float
    mean_qlen: float


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 20
    lr: float = 1e-2
    batch_size: int = 32
    seed: int = 0


# --- encoder ----------------------------------------------------------------

def _encode_entries(params: ToyEncoderParams, raw: SparseVector):
    """Encoded weights over the raw support plus dw/dz (0 where relu clamps)."""
    z = params.scale[raw.tokens] * raw.weights + params.bias[raw.tokens]
    active = z > 0
    zc = np.where(active, z, 0.0)
    w = np.log1p(zc)
    dw_dz = np.where(active, 1.0 / (1.0 + zc), 0.0)
    return w, dw_dz


def encode_toy(params: ToyEncoderParams, raw: SparseVector) -> SparseVector:
    if len(raw) and raw.tokens[-1] >= params.vocab_size:
        raise ValueError(f"{raw.owner_id!r}: token outside encoder vocabulary")
    w, _ = _encode_entries(params, raw)
    keep = w > 0
    return SparseVector(raw.tokens[keep], w[keep], raw.owner_id)


# --- loss components ----------------------------------------------------------

def train_rank_score(q_enc: SparseVector, d_enc: SparseVector, cfg: ThresholdConfig) -> float:
    """Training-time rank score: thresholded query . thresholded document."""
    common, qi, di = np.intersect1d(q_enc.tokens, d_enc.tokens, assume_unique=True, return_indices=True)
    if common.size == 0:
        return 0.0
    qs = threshold_values(q_enc.weights[qi], cfg.query_fn, cfg.t_Q, cfg.K)
    ds = threshold_values(d_enc.weights[di], cfg.doc_fn, cfg.t_D, cfg.K)
    return float(np.dot(qs, ds))


def _require_batch(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")


def _cfg_for(state: TrainState, cfg: ThresholdConfig) -> ThresholdConfig:
    # bypass validation: finite-difference probes may step a threshold below 0
    new = object.__new__(ThresholdConfig)
    for k, v in asdict(cfg).items():
        object.__setattr__(new, k, v)
    object.__setattr__(new, "t_D", state.t_D)
    object.__setattr__(new, "t_Q", state.t_Q)
    return new


def margin_mse(batch: Sequence[TrainingTriple], state: TrainState, cfg: ThresholdConfig) -> float:
    _require_batch(batch)
    c = _cfg_for(state, cfg)
    errs = []
    for tr in batch:
        q = encode_toy(state.params, tr.query_raw)
        m = train_rank_score(q, encode_toy(state.params, tr.pos_raw), c) - train_rank_score(
            q, encode_toy(state.params, tr.neg_raw), c
        )
        errs.append((m - tr.teacher_margin) ** 2)
    return float(np.mean(errs))


def reg_l_q(queries: Sequence[SparseVector]) -> float:
    """L1 query regularizer: sum over tokens of the batch-mean weight."""
    _require_batch(queries)
    return float(sum(float(np.sum(q.weights)) for q in queries) / len(queries))


def reg_l_d(docs: Sequence[SparseVector]) -> float:
    """FLOPS regularizer: sum over tokens of the squared batch-mean weight."""
    _require_batch(docs)
    acc: dict = {}
    for d in docs:
        for t, w in zip(d.tokens.tolist(), d.weights.tolist()):
            acc[t] = acc.get(t, 0.0) + w
    n = len(docs)
    return float(sum((s / n) ** 2 for s in acc.values()))


def reg_l_t(t_D: float, t_Q: float) -> float:
    return float(softplus_neg(t_D) + softplus_neg(t_Q))


def _batch_pass(batch, state: TrainState, cfg: ThresholdConfig, want_grad: bool):
    """Forward pass over a batch, optionally with the full analytic gradient."""
    _require_batch(batch)
    params = state.params
    K, tq, td = cfg.K, state.t_Q, state.t_D
    n_b = len(batch)
    n_docs = 2 * n_b
    vocab = params.vocab_size

    # encode everything once; keep raw arrays for the chain rule
    enc = []
    for tr in batch:
        row = []
        for raw in (tr.query_raw, tr.pos_raw, tr.neg_raw):
            if len(raw) and raw.tokens[-1] >= vocab:
                raise ValueError(f"{raw.owner_id!r}: token outside encoder vocabulary")
            w, dw_dz = _encode_entries(params, raw)
            row.append((raw, w, dw_dz))
        enc.append(row)

    doc_sum = np.zeros(vocab)
    l_q = 0.0
    for row in enc:
        raw_q, w_q, _ = row[0]
        l_q += float(np.sum(w_q))
        for raw_d, w_d, _ in row[1:]:
            np.add.at(doc_sum, raw_d.tokens, w_d)
    l_q /= n_b
    doc_mean = doc_sum / n_docs
    l_d = float(np.dot(doc_mean, doc_mean))
    l_t = reg_l_t(td, tq)

    sq_errs = []
    per_triple = []
    for tr, row in zip(batch, enc):
        raw_q, w_q, _ = row[0]
        s_q = threshold_values(w_q, cfg.query_fn, tq, K)
        scores, parts = [], []
        for raw_d, w_d, _ in row[1:]:
            _, qi, di = np.intersect1d(raw_q.tokens, raw_d.tokens, assume_unique=True, return_indices=True)
            h_d = threshold_values(w_d[di], cfg.doc_fn, td, K)
            scores.append(float(np.dot(s_q[qi], h_d)))
            parts.append((qi, di, h_d))
        err = scores[0] - scores[1] - tr.teacher_margin
        sq_errs.append(err * err)
        per_triple.append((err, s_q, parts))
    l_r = float(np.mean(sq_errs))
    total = l_r + cfg.lambda_Q * l_q + cfg.lambda_D * l_d + cfg.lambda_T * l_t
    loss = LossBreakdown(l_r, l_q, l_d, l_t, total)
    if not want_grad:
        return loss, None

    g_scale = np.zeros(vocab)
    g_bias = np.zeros(vocab)
    g_td = cfg.lambda_T * -float(sigmoid(-td))
    g_tq = cfg.lambda_T * -float(sigmoid(-tq))

    def push(raw, dw_dz, g_w):
        g_z = g_w * dw_dz
        np.add.at(g_scale, raw.tokens, g_z * raw.weights)
        np.add.at(g_bias, raw.tokens, g_z)

    for row, (err, s_q, parts) in zip(enc, per_triple):
        raw_q, w_q, dq_dz = row[0]
        dl_dm = 2.0 * err / n_b
        ds_dw, ds_dt = threshold_grads(w_q, cfg.query_fn, tq, K)
        g_sq = np.zeros_like(w_q)  # dL/d(thresholded query weight)
        for sign, (raw_d, w_d, dd_dz), (qi, di, h_d) in zip((1.0, -1.0), row[1:], parts):
            coef = sign * dl_dm
            g_sq[qi] += coef * h_d
            g_h = coef * s_q[qi]  # dL/d(thresholded doc weight)
            dh_dw, dh_dt = threshold_grads(w_d[di], cfg.doc_fn, td, K)
            g_td += float(np.dot(g_h, dh_dt))
            g_wd = np.zeros_like(w_d)
            g_wd[di] = g_h * dh_dw
            g_wd += cfg.lambda_D * 2.0 * doc_mean[raw_d.tokens] / n_docs
            push(raw_d, dd_dz, g_wd)
        g_tq += float(np.dot(g_sq, ds_dt))
        g_wq = g_sq * ds_dw + cfg.lambda_Q / n_b
        push(raw_q, dq_dz, g_wq)

    return loss, Gradients(g_td, g_tq, g_scale, g_bias)


def loss_total(batch, state: TrainState, cfg: ThresholdConfig) -> LossBreakdown:
    return _batch_pass(batch, state, cfg, want_grad=False)[0]


def grad_analytic(batch, state: TrainState, cfg: ThresholdConfig) -> Gradients:
    return _batch_pass(batch, state, cfg, want_grad=True)[1]


def sgd_step(state: TrainState, grads: Gradients, lr: float) -> TrainState:
    """Plain SGD update; thresholds are clamped at zero afterwards."""
    if not lr > 0:
        raise ValueError("learning rate must be > 0")
    if not grads.is_finite():
        raise TrainingDiverged("diverged")
    with np.errstate(over="ignore", invalid="ignore"):
        scale = state.params.scale - lr * grads.scale
        bias = state.params.bias - lr * grads.bias
    t_D = max(0.0, state.t_D - lr * grads.t_D)
    t_Q = max(0.0, state.t_Q - lr * grads.t_Q)
    if not (np.isfinite(scale).all() and np.isfinite(bias).all() and math.isfinite(t_D + t_Q)):
        raise TrainingDiverged("diverged")
    return TrainState(ToyEncoderParams(scale, bias), t_D=t_D, t_Q=t_Q, step=state.step + 1, rng_seed=state.rng_seed)


# --- training loop ------------------------------------------------------------

def inference_fn(train_fn: Thresholding | str) -> Thresholding:
    """Thresholding used outside training: sigmoid becomes hard, others stay."""
    train_fn = Thresholding(train_fn)
    return Thresholding.HARD if train_fn is Thresholding.SIGMOID else train_fn


def encode_collection(params, vectors: Iterable[SparseVector]) -> list:
    return [encode_toy(params, v) for v in vectors]


def _side_stats(encoded, fn, t):
    weights = [v.weights for v in encoded if len(v)]
    flat = np.concatenate(weights) if weights else np.empty(0)
    mean_w = float(flat.mean()) if flat.size else 0.0
    lens = [int(np.count_nonzero(threshold_values(v.weights, fn, t))) for v in encoded]
    return mean_w, float(np.mean(lens)) if lens else 0.0


def epoch_trace(epoch: int, state: TrainState, cfg: ThresholdConfig, docs, queries) -> EpochTrace:
    mean_wd, dlen = _side_stats(encode_collection(state.params, docs), inference_fn(cfg.doc_fn), state.t_D)
    mean_wq, qlen = _side_stats(encode_collection(state.params, queries), inference_fn(cfg.query_fn), state.t_Q)
    return EpochTrace(epoch, mean_wd, mean_wq, state.t_D, state.t_Q, dlen, qlen)


def make_triples(docs: Collection, queries: Collection, records: Iterable[dict]) -> list:
    """Resolve triple records {"q", "pos", "neg", "teacher_margin"} against collections."""
    dmap, qmap = docs.by_id(), queries.by_id()
    out = []
    for rec in records:
        try:
            out.append(
                TrainingTriple(qmap[rec["q"]], dmap[rec["pos"]], dmap[rec["neg"]], float(rec["teacher_margin"]))
            )
        except KeyError as exc:
            raise ValueError(f"triple references unknown id {exc.args[0]!r}") from None
    return out


def train(
    docs: Collection,
    queries: Collection,
    triples: Sequence[TrainingTriple],
    cfg: ThresholdConfig,
    options: TrainOptions = TrainOptions(),
    init: TrainState | None = None,
):
    """Run mini-batch SGD; returns the final state and one trace row per epoch.

    Shuffling comes from a generator seeded with options.seed, so identical
    inputs give bit-identical results.
    """
    if not triples:
        raise ValueError("no training triples")
    rng = np.random.default_rng(options.seed)
    state = init or TrainState(
        ToyEncoderParams.identity(docs.vocab_size), t_D=cfg.t_D, t_Q=cfg.t_Q, rng_seed=options.seed
    )
    traces = []
    n = len(triples)
    for epoch in range(1, options.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, options.batch_size):
            batch = [triples[i] for i in order[start : start + options.batch_size]]
            loss, grads = _batch_pass(batch, state, cfg, want_grad=True)
            if not math.isfinite(loss.total):
                raise TrainingDiverged("diverged")
            state = sgd_step(state, grads, options.lr)
        tr = epoch_trace(epoch, state, cfg, docs, queries)
        log.info(
            "epoch %d: t_D=%.4f t_Q=%.4f dlen=%.2f qlen=%.2f loss=%.5f",
            epoch, tr.t_D, tr.t_Q, tr.mean_dlen, tr.mean_qlen, loss.total,
        )
        traces.append(tr)
    return state, traces


# --- files --------------------------------------------------------------------

TRACE_HEADER = ["epoch", "mean_w_d", "mean_w_q", "t_d", "t_q", "dlen", "qlen"]


def traces_to_csv(traces: Sequence[EpochTrace]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for t in traces:
        writer.writerow(
            [t.epoch, repr(t.mean_doc_weight), repr(t.mean_query_weight), repr(t.t_D), repr(t.t_Q),
             repr(t.mean_dlen), repr(t.mean_qlen)]
        )
    return buf.getvalue()


def write_trace(traces, path) -> None:
    atomic_write_text(path, traces_to_csv(traces))


def save_checkpoint(state: TrainState, cfg: ThresholdConfig, path) -> None:
    cfg_dict = asdict(cfg)
    cfg_dict["query_fn"] = Thresholding(cfg.query_fn).value
    cfg_dict["doc_fn"] = Thresholding(cfg.doc_fn).value
    obj = {
        "scale": state.params.scale.tolist(),
        "bias": state.params.bias.tolist(),
        "t_D": state.t_D,
        "t_Q": state.t_Q,
        "cfg": cfg_dict,
        "seed": state.rng_seed,
        "step": state.step,
    }
    atomic_write_text(path, json.dumps(obj))


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        params = ToyEncoderParams(obj["scale"], obj["bias"])
        state = TrainState(params, float(obj["t_D"]), float(obj["t_Q"]), int(obj["step"]), int(obj["seed"]))
        cfg = ThresholdConfig(**obj["cfg"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed checkpoint {path}: {exc}") from None
    return state, cfg
