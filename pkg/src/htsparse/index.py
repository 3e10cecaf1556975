"""Document sparsification and impact-quantized inverted index construction.

File layout (little-endian)::

    "SPHT" | version u32 | vocab_size u32 | doc_count u32 | bits u8 | global_max f64
    doc_count x (id_len u16 | id utf-8 | nnz u32)
    list_count u32
    list_count x (token u32 | length u32 | max_weight f64 | gap_bytes u32
                  | doc gaps, group-varint, restarted every 128 postings
                  | impacts per 128-block: bit-packed at `bits`, or f64 when bits == 0)

Lists appear in ascending token order. The first gap of a list is the
ordinal of its first document.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import BLOCK_SIZE, CodecError, bitpack, bitunpack, group_varint_decode, group_varint_encode, packed_size
from .io import atomic_write_bytes
from .thresholds import hard
from .vectors import Collection, SparseVector

MAGIC = b"SPHT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBd")
_LIST_HEADER = struct.Struct("<IIdI")


class IndexFileError(ValueError):
    """Malformed or unsupported index file."""


class EmptyIndex(ValueError):
    pass


# --- sparsification -----------------------------------------------------------

@dataclass(frozen=True)
class SparsifyMode:
    """One of none, ht:<t>, cut:<t>, topk:<k>, dcp:<fraction>."""

    kind: str = "none"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "ht", "cut", "topk", "dcp"):
            raise ValueError(f"unknown sparsify mode {self.kind!r}")
        if self.kind in ("ht", "cut") and not self.param >= 0:
            raise ValueError(f"{self.kind} threshold must be >= 0")
        if self.kind == "topk" and (self.param < 1 or self.param != int(self.param)):
            raise ValueError("topk needs an integer k >= 1")
        if self.kind == "dcp" and not 0 < self.param <= 1:
            raise ValueError("dcp fraction must be in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "SparsifyMode":
        text = text.strip().lower()
        if text == "none":
            return cls()
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"mode {text!r} must look like ht:0.5, cut:0.5, topk:64, dcp:0.5 or none")
        try:
            param = float(value)
        except ValueError:
            raise ValueError(f"mode {text!r}: {value!r} is not a number") from None
        return cls(kind, param)

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "topk":
            return f"topk:{int(self.param)}"
        return f"{self.kind}:{self.param:g}"


def _keep_largest(v: SparseVector, n: int) -> SparseVector:
    if n >= len(v):
        return v
    # larger weight first; ties go to the lower token id
    order = np.lexsort((v.tokens, -v.weights))[:n]
    order.sort()
    return SparseVector(v.tokens[order], v.weights[order], v.owner_id)


def sparsify(v: SparseVector, mode: SparsifyMode) -> SparseVector:
    if mode.kind == "none":
        return v
    if mode.kind in ("ht", "cut"):
        w = hard(v.weights, mode.param)
        keep = w > 0
        return SparseVector(v.tokens[keep], v.weights[keep], v.owner_id)
    if mode.kind == "topk":
        return _keep_largest(v, int(mode.param))
    return _keep_largest(v, math.ceil(mode.param * len(v)))


# --- quantization -------------------------------------------------------------

@dataclass(frozen=True)
class QuantizationSpec:
    bits: int = 0
    global_max: float = 1.0

    def __post_init__(self):
        if self.bits not in (0, 8, 16):
            raise ValueError("bits must be 0 (exact), 8 or 16")
        if not (self.global_max > 0 and math.isfinite(self.global_max)):
            raise ValueError("global_max must be finite and > 0")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


def _check_quant(w, spec: QuantizationSpec):
    if spec.bits == 0:
        raise ValueError("quantization disabled (bits=0)")
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or np.any(w > spec.global_max):
        raise ValueError(f"weight outside [0, global_max={spec.global_max}]")
    return w


def dequantize(q, spec: QuantizationSpec):
    out = np.asarray(q, dtype=np.float64) / spec.levels * spec.global_max
    return out[()] if out.ndim == 0 else out


def quantize(w, spec: QuantizationSpec):
    """Floor quantization: dequantize(q) <= w < dequantize(q + 1).

    The floor is corrected by one level where rounding in w / global_max
    or in dequantize would break that ordering.
    """
    w = _check_quant(w, spec)
    q = np.floor(w / spec.global_max * spec.levels).astype(np.int64)
    q = np.clip(q, 0, spec.levels)
    q = np.where((q > 0) & (dequantize(q, spec) > w), q - 1, q)
    up = np.minimum(q + 1, spec.levels)
    q = np.where((q < spec.levels) & (dequantize(up, spec) <= w), up, q)
    return q[()] if q.ndim == 0 else q


# --- index --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PostingList:
    """Postings of one token. `weights` are the scoring weights: exact when
    quantization is off, dequantized impacts otherwise."""

    token: int
    docs: np.ndarray
    weights: np.ndarray
    max_weight: float
    impacts: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.docs.size)


@dataclass(frozen=True)
class IndexStats:
    doc_count: int
    postings: int
    mean_dlen: float
    byte_size: int
    list_count: int


@dataclass(eq=False)
class InvertedIndex:
    lists: dict
    doc_ids: list
    doc_nnz: np.ndarray
    quant: QuantizationSpec
    vocab_size: int

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def postings_count(self) -> int:
        return int(sum(len(pl) for pl in self.lists.values()))

    def to_bytes(self) -> bytes:
        return serialize(self)


def _sparsify_all(docs: Sequence[SparseVector], mode: SparsifyMode, workers: int):
    if workers <= 1:
        return [sparsify(d, mode) for d in docs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves input order, so ordinals are stable
        return list(pool.map(lambda d: sparsify(d, mode), docs, chunksize=64))


def build(
    collection: Collection,
    mode: SparsifyMode = SparsifyMode(),
    bits: int = 0,
    global_max: float | None = None,
    workers: int = 1,
) -> InvertedIndex:
    """Sparsify every document and invert the result.

    Documents keep their collection order as ordinals; documents left empty
    stay in the doc table with nnz 0. With quantization on, postings whose
    impact rounds to 0 carry no score and are not stored.
    """
    docs = _sparsify_all(list(collection), mode, workers)
    lens = np.array([len(d) for d in docs], dtype=np.int64)
    if lens.sum() == 0:
        raise EmptyIndex("empty index: no postings survive sparsification")
    tokens = np.concatenate([d.tokens for d in docs])
    weights = np.concatenate([d.weights for d in docs])
    ordinals = np.repeat(np.arange(len(docs), dtype=np.int64), lens)

    gmax = float(weights.max()) if global_max is None else float(global_max)
    quant = QuantizationSpec(bits, gmax)
    impacts = None
    if bits:
        impacts = quantize(weights, quant)
        keep = impacts > 0
        tokens, weights, ordinals, impacts = tokens[keep], weights[keep], ordinals[keep], impacts[keep]
        if tokens.size == 0:
            raise EmptyIndex("empty index: every impact quantizes to 0")

    order = np.lexsort((ordinals, tokens))
    tokens, weights, ordinals = tokens[order], weights[order], ordinals[order]
    if impacts is not None:
        impacts = impacts[order]
    starts = np.flatnonzero(np.r_[True, tokens[1:] != tokens[:-1]])
    ends = np.r_[starts[1:], tokens.size]

    lists = {}
    for s, e in zip(starts.tolist(), ends.tolist()):
        tok = int(tokens[s])
        exact = weights[s:e]
        if impacts is None:
            pl = PostingList(tok, ordinals[s:e].copy(), exact.copy(), float(exact.max()))
        else:
            imp = impacts[s:e].copy()
            pl = PostingList(tok, ordinals[s:e].copy(), dequantize(imp, quant), float(exact.max()), imp)
        lists[tok] = pl
    doc_nnz = np.bincount(ordinals, minlength=len(docs)).astype(np.int64)
    return InvertedIndex(lists, [d.owner_id for d in docs], doc_nnz, quant, collection.vocab_size)


# --- serialization ------------------------------------------------------------

def serialize(index: InvertedIndex) -> bytes:
    q = index.quant
    out = bytearray(_HEADER.pack(MAGIC, VERSION, index.vocab_size, index.doc_count, q.bits, q.global_max))
    for doc_id, nnz in zip(index.doc_ids, index.doc_nnz.tolist()):
        raw = doc_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise IndexFileError(f"document id too long: {doc_id[:40]!r}...")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<I", nnz)
    out += struct.pack("<I", len(index.lists))
    for tok in sorted(index.lists):
        pl = index.lists[tok]
        docs = pl.docs.tolist()
        gaps = bytearray()
        impacts = bytearray()
        for b in range(0, len(docs), BLOCK_SIZE):
            block = docs[b : b + BLOCK_SIZE]
            prev = docs[b - 1] if b else 0
            deltas = [block[0] - prev] + [y - x for x, y in zip(block, block[1:])]
            gaps += group_varint_encode(deltas)
            if q.bits:
                impacts += bitpack(pl.impacts[b : b + BLOCK_SIZE], q.bits)
            else:
                impacts += pl.weights[b : b + BLOCK_SIZE].astype("<f8").tobytes()
        out += _LIST_HEADER.pack(tok, len(docs), pl.max_weight, len(gaps))
        out += gaps
        out += impacts
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFileError(f"truncated index file while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def deserialize(data: bytes) -> InvertedIndex:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise IndexFileError("bad magic: not an SPHT index file")
    _, version, vocab_size, doc_count, bits, gmax = r.unpack(_HEADER, "header")
    if version != VERSION:
        raise IndexFileError(f"unsupported index version {version}")
    try:
        quant = QuantizationSpec(bits, gmax)
    except ValueError as exc:
        raise IndexFileError(f"corrupt header: {exc}") from None
    doc_ids, doc_nnz = [], []
    u16, u32 = struct.Struct("<H"), struct.Struct("<I")
    for _ in range(doc_count):
        (n,) = r.unpack(u16, "doc table")
        try:
            doc_ids.append(r.take(n, "doc table").decode("utf-8"))
        except UnicodeDecodeError:
            raise IndexFileError("corrupt doc table: id is not utf-8") from None
        doc_nnz.append(r.unpack(u32, "doc table")[0])
    (list_count,) = r.unpack(u32, "list count")
    lists = {}
    for _ in range(list_count):
        tok, length, max_weight, gap_bytes = r.unpack(_LIST_HEADER, "list header")
        if tok >= vocab_size or length == 0 or tok in lists:
            raise IndexFileError(f"corrupt list header for token {tok}")
        gap_data = r.take(gap_bytes, f"doc gaps of token {tok}")
        docs, pos = [], 0
        try:
            for b in range(0, length, BLOCK_SIZE):
                n = min(BLOCK_SIZE, length - b)
                deltas, pos = group_varint_decode(gap_data, n, pos)
                prev = docs[-1] if docs else 0
                for d in deltas:
                    prev += d
                    docs.append(prev)
        except CodecError as exc:
            raise IndexFileError(f"token {tok}: {exc}") from None
        if pos != gap_bytes:
            raise IndexFileError(f"token {tok}: gap section length mismatch")
        docs_arr = np.asarray(docs, dtype=np.int64)
        if docs_arr[-1] >= doc_count or np.any(np.diff(docs_arr) <= 0):
            raise IndexFileError(f"token {tok}: invalid document ordinals")
        if bits:
            chunks = []
            for b in range(0, length, BLOCK_SIZE):
                n = min(BLOCK_SIZE, length - b)
                chunks.append(bitunpack(r.take(packed_size(n, bits), f"impacts of token {tok}"), n, bits))
            impacts = np.concatenate(chunks)
            lists[tok] = PostingList(tok, docs_arr, dequantize(impacts, quant), max_weight, impacts)
        else:
            weights = np.frombuffer(r.take(8 * length, f"weights of token {tok}"), dtype="<f8").astype(np.float64)
            lists[tok] = PostingList(tok, docs_arr, weights, max_weight)
    if r.pos != len(data):
        raise IndexFileError(f"trailing bytes after index data ({len(data) - r.pos})")
    index = InvertedIndex(lists, doc_ids, np.asarray(doc_nnz, dtype=np.int64), quant, vocab_size)
    if index.postings_count != int(index.doc_nnz.sum()):
        raise IndexFileError("doc table nnz does not match postings")
    return index


def write(index: InvertedIndex, path) -> int:
    data = serialize(index)
    atomic_write_bytes(path, data)
    return len(data)


def read(path) -> InvertedIndex:
    return deserialize(Path(path).read_bytes())


def index_stats(index: InvertedIndex, byte_size: int | None = None) -> IndexStats:
    postings = index.postings_count
    if byte_size is None:
        byte_size = len(serialize(index))
    return IndexStats(
        doc_count=index.doc_count,
        postings=postings,
        mean_dlen=postings / index.doc_count if index.doc_count else 0.0,
        byte_size=byte_size,
        list_count=len(index.lists),
    )
