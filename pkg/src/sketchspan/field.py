"""Mersenne-prime field arithmetic and seeded hashing.

All sketch cells hold residues modulo ``P = 2**61 - 1`` in ``uint64`` arrays.
Sums of two residues stay below ``2**62`` so cell-wise addition never
overflows; longer sums go through :func:`sum_mod`.
"""

from __future__ import annotations

import hashlib

import numpy as np

P = (1 << 61) - 1
FIELD_BITS = 61
SEED_BYTES = 32

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_LO32 = np.uint64(0xFFFFFFFF)


def as_seed(seed: int | bytes) -> bytes:
    """Normalise a seed to 32 bytes (ints are encoded little-endian)."""
    if isinstance(seed, (bytes, bytearray)):
        if len(seed) != SEED_BYTES:
            raise ValueError(f"seed must be {SEED_BYTES} bytes, got {len(seed)}")
        return bytes(seed)
    if not 0 <= seed < 1 << (8 * SEED_BYTES):
        raise ValueError("integer seed must fit in 256 bits")
    return int(seed).to_bytes(SEED_BYTES, "little")


def prf(seed: bytes, label: str, nbytes: int = 8) -> bytes:
    """Keyed BLAKE2b of ``label`` under ``seed``."""
    return hashlib.blake2b(label.encode(), key=seed, digest_size=nbytes).digest()


def prf_int(seed: bytes, label: str) -> int:
    return int.from_bytes(prf(seed, label, 8), "little")


def derive_seed(seed: bytes, label: str) -> bytes:
    return prf(seed, label, SEED_BYTES)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (wrapping arithmetic)."""
    x = x ^ (x >> np.uint64(30))
    x = x * _MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _MIX2
    return x ^ (x >> np.uint64(31))


def index_hash(keys: np.ndarray, index: int) -> np.ndarray:
    """Hash ``index`` under every key in ``keys``."""
    offset = np.uint64((index * _GOLDEN) & _MASK64)
    return mix64(keys + offset)


def trailing_zeros(h: np.ndarray) -> np.ndarray:
    """Trailing-zero count of each uint64 (64 for zero)."""
    low = h & (~h + np.uint64(1))
    _, exp = np.frexp(low.astype(np.float64))
    return np.where(h == 0, 64, exp - 1).astype(np.int64)


def mul_pow2_32(x: np.ndarray) -> np.ndarray:
    """``x * 2**32 mod P`` for residues ``x < P``."""
    hi = x >> np.uint64(29)
    lo = (x & np.uint64((1 << 29) - 1)) << np.uint64(32)
    return (lo + hi) % np.uint64(P)


def sum_mod(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum residues along ``axis`` modulo P without overflow (< 2**29 terms)."""
    lo = (x & _LO32).sum(axis=axis, dtype=np.uint64) % np.uint64(P)
    hi = (x >> np.uint64(32)).sum(axis=axis, dtype=np.uint64) % np.uint64(P)
    return (mul_pow2_32(hi) + lo) % np.uint64(P)


def _fold(x: np.ndarray) -> np.ndarray:
    """Reduce uint64 values below ``2**63`` to residues, using ``2**61 = 1 mod P``."""
    x = (x & np.uint64(P)) + (x >> np.uint64(61))
    return np.where(x >= np.uint64(P), x - np.uint64(P), x)


def mul_mod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``a * b mod P`` for residues, via 32-bit limbs."""
    a0, a1 = a & _LO32, a >> np.uint64(32)
    b0, b1 = b & _LO32, b >> np.uint64(32)
    mid = a1 * b0 + a0 * b1  # < 2**62
    low = a0 * b0
    total = ((a1 * b1) << np.uint64(3)) + (mid >> np.uint64(29)) \
        + ((mid & np.uint64((1 << 29) - 1)) << np.uint64(32)) + (low & np.uint64(P)) + (low >> np.uint64(61))
    return _fold(total)


def pow_mod(base: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    """Elementwise ``base ** exponent mod P`` (broadcasting) by square-and-multiply."""
    base, exponent = np.broadcast_arrays(np.asarray(base, dtype=np.uint64), np.asarray(exponent, dtype=np.uint64))
    result = np.ones(base.shape, dtype=np.uint64)
    base = base.copy()
    exponent = exponent.copy()
    while exponent.any():
        odd = (exponent & np.uint64(1)).astype(bool)
        result = np.where(odd, mul_mod(result, base), result)
        base = mul_mod(base, base)
        exponent >>= np.uint64(1)
    return result


def segment_sum_mod(x: np.ndarray, labels: np.ndarray, num_groups: int) -> np.ndarray:
    """Per-group sums of the rows of ``x`` modulo P.

    ``labels[i]`` is the group of row ``i``; groups without rows sum to zero.
    """
    out = np.zeros((num_groups,) + x.shape[1:], dtype=np.uint64)
    if len(labels) == 0:
        return out
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    xs = x[order]
    lo = np.add.reduceat(xs & _LO32, starts, axis=0, dtype=np.uint64) % np.uint64(P)
    hi = np.add.reduceat(xs >> np.uint64(32), starts, axis=0, dtype=np.uint64) % np.uint64(P)
    out[sorted_labels[starts]] = (mul_pow2_32(hi) + lo) % np.uint64(P)
    return out


def to_signed(residue: int) -> int:
    """Interpret a residue as the nearest-to-zero integer."""
    return residue - P if residue > P // 2 else residue


def pack61(values: np.ndarray) -> bytes:
    """Pack residues as consecutive 61-bit little-endian fields."""
    flat = np.ascontiguousarray(values, dtype="<u8").reshape(-1)
    bits = np.unpackbits(flat.view(np.uint8).reshape(-1, 8), axis=1, bitorder="little")
    return np.packbits(bits[:, :FIELD_BITS].reshape(-1), bitorder="little").tobytes()


def unpack61(data: bytes, count: int) -> np.ndarray:
    """Inverse of :func:`pack61`; raises ValueError on non-residues."""
    nbits = count * FIELD_BITS
    if len(data) != (nbits + 7) // 8:
        raise ValueError("packed field length mismatch")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits[nbits:].any():
        raise ValueError("nonzero padding bits")
    padded = np.zeros((count, 64), dtype=np.uint8)
    padded[:, :FIELD_BITS] = bits[:nbits].reshape(count, FIELD_BITS)
    values = np.packbits(padded, axis=1, bitorder="little").reshape(-1).view("<u8")
    values = values.astype(np.uint64)
    if (values >= np.uint64(P)).any():
        raise ValueError("field element out of range")
    return values


def packed_bytes(count: int) -> int:
    return (count * FIELD_BITS + 7) // 8
