"""Little-endian packing of narrow two's-complement integers into byte streams.

Element widths of 8/16/32 bits map onto native numpy dtypes; 1/2/4-bit
elements are packed LSB-first within each byte.
"""

from __future__ import annotations

import numpy as np

_NATIVE = {8: "<i1", 16: "<i2", 32: "<i4"}
SUPPORTED_WIDTHS = (1, 2, 4, 8, 16, 32)


def wrap(values: np.ndarray | int, bits: int) -> np.ndarray | int:
    """Reduce values to `bits`-wide two's complement (wrap-around, no saturation)."""
    mask = (1 << bits) - 1
    half = 1 << (bits - 1)
    return ((np.asarray(values, dtype=np.int64) & mask) ^ half) - half


def pack_ints(values: np.ndarray, bits: int) -> np.ndarray:
    """Pack integer values into a flat uint8 array at `bits` per element."""
    if bits not in SUPPORTED_WIDTHS:
        raise ValueError(f"unsupported element width: {bits}")
    flat = np.ascontiguousarray(np.asarray(values, dtype=np.int64).ravel())
    if bits in _NATIVE:
        return flat.astype(_NATIVE[bits]).view(np.uint8).copy()
    per_byte = 8 // bits
    if flat.size % per_byte:
        raise ValueError(f"{flat.size} elements do not fill whole bytes at {bits} bits")
    mask = (1 << bits) - 1
    chunks = (flat & mask).reshape(-1, per_byte).astype(np.uint8)
    out = np.zeros(chunks.shape[0], dtype=np.uint8)
    for j in range(per_byte):
        out |= chunks[:, j] << (j * bits)
    return out


def unpack_ints(raw: np.ndarray, bits: int, count: int) -> np.ndarray:
    """Unpack `count` signed elements of `bits` width from a uint8 array."""
    if bits not in SUPPORTED_WIDTHS:
        raise ValueError(f"unsupported element width: {bits}")
    raw = np.ascontiguousarray(np.asarray(raw, dtype=np.uint8))
    if bits in _NATIVE:
        nbytes = count * bits // 8
        if raw.size < nbytes:
            raise ValueError("byte buffer too small")
        return raw[:nbytes].view(_NATIVE[bits]).astype(np.int64)
    per_byte = 8 // bits
    nbytes = (count + per_byte - 1) // per_byte
    if raw.size < nbytes:
        raise ValueError("byte buffer too small")
    mask = (1 << bits) - 1
    cols = [(raw[:nbytes] >> (j * bits)) & mask for j in range(per_byte)]
    vals = np.stack(cols, axis=1).ravel()[:count].astype(np.int64)
    return wrap(vals, bits)
