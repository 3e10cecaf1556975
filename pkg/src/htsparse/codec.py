"""Group-varint and fixed-width bit-packing codecs for posting blocks."""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 128


class CodecError(ValueError):
    pass


def _byte_len(v: int) -> int:
    if v < 0 or v > 0xFFFFFFFF:
        raise CodecError(f"value {v} does not fit in u32")
    if v < 1 << 8:
        return 1
    if v < 1 << 16:
        return 2
    if v < 1 << 24:
        return 3
    return 4


def group_varint_encode(values) -> bytes:
    """Groups of four u32 values behind one control byte of 2-bit lengths.

    A short final group leaves its unused control slots zero and writes
    no bytes for them; the decoder is told the value count.
    """
    out = bytearray()
    values = [int(v) for v in values]
    for g in range(0, len(values), 4):
        group = values[g : g + 4]
        control = 0
        body = bytearray()
        for slot, v in enumerate(group):
            n = _byte_len(v)
            control |= (n - 1) << (2 * slot)
            body += v.to_bytes(n, "little")
        out.append(control)
        out += body
    return bytes(out)


def group_varint_decode(data, count: int, offset: int = 0):
    """Decode `count` values; returns (values, offset past the last byte)."""
    values = []
    pos = offset
    end = len(data)
    while len(values) < count:
        if pos >= end:
            raise CodecError("truncated group-varint data")
        control = data[pos]
        pos += 1
        for slot in range(min(4, count - len(values))):
            n = ((control >> (2 * slot)) & 3) + 1
            if pos + n > end:
                raise CodecError("truncated group-varint data")
            values.append(int.from_bytes(data[pos : pos + n], "little"))
            pos += n
    return values, pos


def bitpack(values, bits: int) -> bytes:
    """Pack unsigned values at a fixed width, least significant bit first."""
    if not 1 <= bits <= 32:
        raise CodecError(f"bit width {bits} out of range")
    arr = np.asarray(values, dtype=np.uint64)
    if arr.size and int(arr.max()) >= 1 << bits:
        raise CodecError(f"value exceeds {bits}-bit width")
    shifts = np.arange(bits, dtype=np.uint64)
    bit_matrix = ((arr[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bit_matrix.ravel(), bitorder="little").tobytes()


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def bitunpack(data, count: int, bits: int) -> np.ndarray:
    if len(data) < packed_size(count, bits):
        raise CodecError("truncated bit-packed data")
    raw = np.frombuffer(bytes(data[: packed_size(count, bits)]), dtype=np.uint8)
    flat = np.unpackbits(raw, bitorder="little")[: count * bits].astype(np.uint64)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (flat.reshape(count, bits) * weights).sum(axis=1).astype(np.int64)
