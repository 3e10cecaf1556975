"""Soft, hard and sigmoid thresholding with derivatives and error bounds.

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .vectors import SparseVector


class Thresholding(str, Enum):
    PHI = "phi"  # no thresholding
    SOFT = "soft"
    HARD = "hard"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class ThresholdConfig:
    t_D: float = 0.0
    t_Q: float = 0.0
    K: float = 25.0
    lambda_Q: float = 0.01
    lambda_D: float = 0.008
    lambda_T: float = 1.0
    query_fn: "Thresholding" = None
    doc_fn: "Thresholding" = None

    def __post_init__(self):
        # training-time functions per side; hard has no gradient
        qf = Thresholding(self.query_fn or Thresholding.SOFT)
        df = Thresholding(self.doc_fn or Thresholding.SIGMOID)
        if Thresholding.HARD in (qf, df):
            raise ValueError("hard thresholding cannot be trained; use sigmoid")
        object.__setattr__(self, "query_fn", qf)
        object.__setattr__(self, "doc_fn", df)
        if not self.K > 0:
            raise ValueError(f"K must be > 0, got {self.K}")
        if self.t_D < 0 or self.t_Q < 0:
            raise ValueError("thresholds must be >= 0")
        for name in ("lambda_Q", "lambda_D", "lambda_T"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def sigmoid(x):
    """Logistic function, branching on sign so exp never overflows."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def softplus_neg(t):
    """log(1 + exp(-t)), stable for large |t|."""
    t = np.asarray(t, dtype=np.float64)
    out = np.maximum(-t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return out[()] if out.ndim == 0 else out


def soft(w, t):
    return np.maximum(0.0, np.subtract(w, t))


def hard(w, t):
    w = np.asarray(w, dtype=np.float64)
    out = np.where(w >= t, w, 0.0)
    return out[()] if out.ndim == 0 else out


def sigmoid_ht(w, t, K):
    return np.multiply(w, sigmoid(K * np.subtract(w, t)))


def approx_error(w, t, K):
    """|sigmoid_ht - hard|, evaluated as w / (2 + expm1(K|w - t|)).

    Both branches of the difference reduce to w / (1 + exp(K|w - t|)).
    Writing the denominator with expm1 avoids cancellation in w - w*sigma
    and keeps the rounded result below error_bound, since expm1(x) >= x
    survives rounding.
    """
    w = np.asarray(w, dtype=np.float64)
    x = K * np.abs(w - t)
    with np.errstate(over="ignore"):
        out = w / (2.0 + np.expm1(x))
    return out[()] if out.ndim == 0 else out


def error_bound(w, t, K):
    """Upper bound w / (2 + K|w - t|) on approx_error; tight at w == t."""
    w = np.asarray(w, dtype=np.float64)
    out = w / (2.0 + K * np.abs(w - t))
    return out[()] if out.ndim == 0 else out


def d_sigmoid_ht_dw(w, t, K):
    s = sigmoid(K * np.subtract(w, t))
    return s + K * np.multiply(w, s * (1.0 - s))


def d_sigmoid_ht_dt(w, t, K):
    s = sigmoid(K * np.subtract(w, t))
    return -K * np.multiply(w, s * (1.0 - s))


def d_soft_dw(w, t):
    # subgradient 0 at the kink w == t
    out = np.where(np.greater(w, t), 1.0, 0.0)
    return out[()] if out.ndim == 0 else out


def d_soft_dt(w, t):
    return -d_soft_dw(w, t)


def threshold_values(w, fn: Thresholding | str, t: float, K: float | None = None):
    fn = Thresholding(fn)
    if fn is Thresholding.PHI:
        return np.asarray(w, dtype=np.float64)
    if fn is Thresholding.SOFT:
        return soft(w, t)
    if fn is Thresholding.HARD:
        return hard(w, t)
    if K is None:
        raise ValueError("sigmoid thresholding requires K")
    return sigmoid_ht(w, t, K)


def threshold_grads(w, fn: Thresholding | str, t: float, K: float | None = None):
    """(d out / d w, d out / d t) for a training-time thresholding function."""
    fn = Thresholding(fn)
    w = np.asarray(w, dtype=np.float64)
    if fn is Thresholding.PHI:
        return np.ones_like(w), np.zeros_like(w)
    if fn is Thresholding.SOFT:
        return d_soft_dw(w, t) * np.ones_like(w), d_soft_dt(w, t) * np.ones_like(w)
    if fn is Thresholding.SIGMOID:
        return d_sigmoid_ht_dw(w, t, K), d_sigmoid_ht_dt(w, t, K)
    raise ValueError("hard thresholding has no useful gradient; train with sigmoid")


def apply_thresholding(v: SparseVector, fn: Thresholding | str, t: float, K: float | None = None) -> SparseVector:
    """Apply a thresholding function entrywise, dropping resulting zeros.

    Sigmoid output is positive wherever w > 0 (barring underflow), so in
    that mode the support of the input is kept.
    """
    out = np.asarray(threshold_values(v.weights, fn, t, K), dtype=np.float64)
    keep = out > 0
    return SparseVector(v.tokens[keep], out[keep], v.owner_id)
