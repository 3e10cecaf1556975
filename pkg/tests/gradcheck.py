"""Central finite-difference oracle for the training loss."""

from dataclasses import replace

import numpy as np

from htsparse.thresholds import ThresholdConfig
from htsparse.trainer import ToyEncoderParams, TrainingTriple, TrainState, grad_analytic, loss_total
from htsparse.vectors import SparseVector

H = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def random_vector(rng, vocab, max_len, owner_id):
    n = int(rng.integers(1, max_len + 1))
    tokens = np.sort(rng.choice(vocab, size=n, replace=False))
    return SparseVector(tokens, rng.uniform(0.05, 3.0, n), owner_id)


def random_problem(rng, K, vocab=24, batch=4):
    triples = []
    for i in range(batch):
        triples.append(TrainingTriple(
            random_vector(rng, vocab, 6, f"q{i}"),
            random_vector(rng, vocab, 10, f"p{i}"),
            random_vector(rng, vocab, 10, f"n{i}"),
            float(rng.normal(0.0, 1.0)),
        ))
    params = ToyEncoderParams(rng.uniform(0.5, 1.5, vocab), rng.uniform(-0.3, 0.3, vocab))
    state = TrainState(params, t_D=float(rng.uniform(0.05, 1.2)), t_Q=float(rng.uniform(0.05, 1.2)))
    cfg = ThresholdConfig(K=K, lambda_Q=float(rng.uniform(0, 0.5)), lambda_D=float(rng.uniform(0, 0.5)),
                          lambda_T=float(rng.uniform(0.5, 3)))
    return triples, state, cfg


def _loss(batch, state, cfg):
    return loss_total(batch, state, cfg).total


def numeric_gradient(batch, state, cfg):
    """Central differences over t_D, t_Q and every encoder parameter."""
    out = {}
    for name in ("t_D", "t_Q"):
        v = getattr(state, name)
        up = _loss(batch, replace(state, **{name: v + H}), cfg)
        down = _loss(batch, replace(state, **{name: v - H}), cfg)
        out[name] = (up - down) / (2 * H)
    for name in ("scale", "bias"):
        base = getattr(state.params, name)
        g = np.zeros_like(base)
        for j in range(base.size):
            vals = []
            for sign in (1, -1):
                arr = base.copy()
                arr[j] += sign * H
                params = ToyEncoderParams(**{**vars(state.params), name: arr})
                vals.append(_loss(batch, replace(state, params=params), cfg))
            g[j] = (vals[0] - vals[1]) / (2 * H)
        out[name] = g
    return out


def gradient_errors(batch, state, cfg, grad_fn=grad_analytic):
    """Compare analytic and numeric gradients component by component.

    Returns (floored, raw): `floored` treats differences at or below the
    absolute floor as exact; `raw` is the plain relative error over
    components whose magnitude is at least 1e-3.
    """
    ana = grad_fn(batch, state, cfg)
    num = numeric_gradient(batch, state, cfg)
    floored = raw = 0.0
    for name in ("t_D", "t_Q", "scale", "bias"):
        a = np.atleast_1d(np.asarray(getattr(ana, name), dtype=np.float64))
        n = np.atleast_1d(np.asarray(num[name], dtype=np.float64))
        diff = np.abs(a - n)
        mag = np.maximum(np.abs(a), np.abs(n))
        rel = diff / np.maximum(mag, 1e-300)
        floored = max(floored, float(np.where(diff <= ABS_FLOOR, 0.0, rel).max()))
        big = mag >= 1e-3
        if big.any():
            raw = max(raw, float(rel[big].max()))
    return floored, raw


def max_relative_error(batch, state, cfg, grad_fn=grad_analytic):
    return gradient_errors(batch, state, cfg, grad_fn)[0]
