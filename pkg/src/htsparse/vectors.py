"""Sparse token-weight vectors, saturation pooling and dot-product scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .io import atomic_write_text

DEFAULT_VOCAB_SIZE = 30522


class VectorError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Token id -> weight map stored as two parallel arrays sorted by token.

    Weights are non-negative and explicit zeros are never stored, so the
    vector is identified with its support.
    """

    tokens: np.ndarray
    weights: np.ndarray
    owner_id: str = ""

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if tokens.ndim != 1 or tokens.shape != weights.shape:
            raise VectorError("tokens and weights must be 1-d arrays of equal length")
        if tokens.size:
            if tokens[0] < 0:
                raise VectorError(f"{self.owner_id!r}: negative token id")
            if np.any(np.diff(tokens) <= 0):
                raise VectorError(f"{self.owner_id!r}: tokens must be strictly increasing")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise VectorError(f"{self.owner_id!r}: weights must be finite and > 0")
        object.__setattr__(self, "tokens", _frozen(tokens.copy()))
        object.__setattr__(self, "weights", _frozen(weights.copy()))

    @classmethod
    def from_arrays(cls, tokens, weights, owner_id: str = "") -> "SparseVector":
        """Build from unsorted arrays, sorting by token and dropping zeros."""
        tokens = np.asarray(tokens, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights < 0):
            raise VectorError(f"{owner_id!r}: negative weight")
        keep = weights > 0
        tokens, weights = tokens[keep], weights[keep]
        order = np.argsort(tokens, kind="stable")
        return cls(tokens[order], weights[order], owner_id)

    @classmethod
    def from_dict(cls, mapping: dict, owner_id: str = "") -> "SparseVector":
        items = sorted(mapping.items())
        return cls.from_arrays([t for t, _ in items], [w for _, w in items], owner_id)

    @classmethod
    def empty(cls, owner_id: str = "") -> "SparseVector":
        return cls(np.empty(0, np.int64), np.empty(0, np.float64), owner_id)

    def to_dict(self) -> dict:
        return {int(t): float(w) for t, w in zip(self.tokens, self.weights)}

    def __len__(self) -> int:
        return int(self.tokens.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.owner_id == other.owner_id
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.owner_id, self.tokens.tobytes(), self.weights.tobytes()))

    def __repr__(self) -> str:
        return f"SparseVector({self.owner_id!r}, {self.to_dict()})"

    def with_id(self, owner_id: str) -> "SparseVector":
        return SparseVector(self.tokens, self.weights, owner_id)


@dataclass(frozen=True)
class TokenScoreMatrix:
    """Per-position token scores from an encoder; scores may be negative."""

    rows: tuple
    positions: int = field(init=False)

    def __post_init__(self):
        rows = tuple(dict(sorted(dict(r).items())) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "positions", len(rows))


@dataclass(frozen=True)
class Collection:
    vectors: tuple
    vocab_size: int = DEFAULT_VOCAB_SIZE

    def __post_init__(self):
        vectors = tuple(self.vectors)
        object.__setattr__(self, "vectors", vectors)
        seen = set()
        for v in vectors:
            if v.owner_id in seen:
                raise VectorError(f"duplicate id {v.owner_id!r}")
            seen.add(v.owner_id)
            if len(v) and v.tokens[-1] >= self.vocab_size:
                raise VectorError(
                    f"{v.owner_id!r}: token {int(v.tokens[-1])} outside vocabulary of {self.vocab_size}"
                )

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self) -> Iterator[SparseVector]:
        return iter(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]

    def by_id(self) -> dict:
        return {v.owner_id: v for v in self.vectors}


def dot(q: SparseVector, d: SparseVector) -> float:
    """Rank score: sum of weight products over shared tokens."""
    # linear merge over the two sorted supports
    qt, qw, dt, dw = q.tokens, q.weights, d.tokens, d.weights
    i = j = 0
    total = 0.0
    while i < qt.size and j < dt.size:
        a, b = qt[i], dt[j]
        if a == b:
            total += float(qw[i]) * float(dw[j])
            i += 1
            j += 1
        elif a < b:
            i += 1
        else:
            j += 1
    return total


def saturate_maxpool(m: TokenScoreMatrix) -> SparseVector:
    """Pool per-position scores into one vector: max_i log(1 + relu(w_ij))."""
    if m.positions == 0:
        raise VectorError("empty input")
    pooled: dict = {}
    for row in m.rows:
        for token, score in row.items():
            value = float(np.log1p(max(0.0, float(score))))
            if value > pooled.get(token, 0.0):
                pooled[token] = value
    return SparseVector.from_dict(pooled)


def nnz(v: SparseVector) -> int:
    return int(np.count_nonzero(v.weights > 0))


def mean_nnz(vectors: Iterable[SparseVector]) -> float:
    counts = [nnz(v) for v in vectors]
    return float(np.mean(counts)) if counts else 0.0


# --- JSONL vector files -------------------------------------------------------

def vector_to_json(v: SparseVector) -> str:
    pairs = [[int(t), float(w)] for t, w in zip(v.tokens, v.weights)]
    return json.dumps({"id": v.owner_id, "vector": pairs}, separators=(",", ":"))


def vector_from_json(line: str) -> SparseVector:
    try:
        obj = json.loads(line)
        owner_id = obj["id"]
        pairs = obj["vector"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise VectorError(f"malformed vector record: {exc}") from None
    if not isinstance(owner_id, str):
        raise VectorError("vector id must be a string")
    if not pairs:
        return SparseVector.empty(owner_id)
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise VectorError(f"{owner_id!r}: vector must be a list of [token, weight] pairs")
    tokens = arr[:, 0].astype(np.int64)
    if not np.array_equal(tokens, arr[:, 0]):
        raise VectorError(f"{owner_id!r}: token ids must be integers")
    if np.any(np.diff(tokens) <= 0):
        raise VectorError(f"{owner_id!r}: token ids must be ascending")
    return SparseVector.from_arrays(tokens, arr[:, 1], owner_id)


def write_vectors(vectors: Sequence[SparseVector], path) -> None:
    atomic_write_text(path, "".join(vector_to_json(v) + "\n" for v in vectors))


def read_vectors(path, vocab_size: int = DEFAULT_VOCAB_SIZE) -> Collection:
    vectors = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vectors.append(vector_from_json(line))
            except VectorError as exc:
                raise VectorError(f"{path}:{lineno}: {exc}") from None
    return Collection(tuple(vectors), vocab_size)
