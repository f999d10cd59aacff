"""Randomized encoding of an m-subset through a subset-relation protocol.

The encoder grows ``T`` from a scheduled starting size, asking the protocol
for a new element at each stage and recording one accept bit; every accepted
element is one fewer element the final tail list has to spell out. Fills
between stages follow a public random permutation, so the decoder replays
the same sequence of ``T`` sets and always recovers ``S``, whatever the
protocol answers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from sketchspan.field import as_seed, prf
from sketchspan.lab.ur import UrParams, UrProtocol


@dataclass(frozen=True)
class EncRecord:
    t0: tuple[int, ...]
    message: bytes
    bits: tuple[int, ...]
    tail: tuple[int, ...]

    @property
    def accepted(self) -> int:
        """``|A|``: stages where the protocol produced a new element."""
        return sum(self.bits)

    def to_bytes(self) -> bytes:
        out = [struct.pack("<I", len(self.t0)), struct.pack(f"<{len(self.t0)}I", *self.t0),
               struct.pack("<I", len(self.message)), self.message,
               struct.pack("<I", len(self.bits)),
               np.packbits(np.array(self.bits, dtype=np.uint8), bitorder="little").tobytes(),
               struct.pack("<I", len(self.tail)), struct.pack(f"<{len(self.tail)}I", *self.tail)]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> EncRecord:
        pos = 0

        def take(fmt: str):
            nonlocal pos
            vals = struct.unpack_from(fmt, data, pos)
            pos += struct.calcsize(fmt)
            return vals

        (k,) = take("<I")
        t0 = take(f"<{k}I")
        (k,) = take("<I")
        message = bytes(data[pos:pos + k])
        pos += k
        (nbits,) = take("<I")
        nbytes = (nbits + 7) // 8
        bits = np.unpackbits(np.frombuffer(data[pos:pos + nbytes], dtype=np.uint8),
                             bitorder="little")[:nbits]
        pos += nbytes
        (k,) = take("<I")
        tail = take(f"<{k}I")
        if pos != len(data):
            raise ValueError(f"{len(data) - pos} trailing bytes in EncRecord")
        return cls(tuple(t0), message, tuple(int(b) for b in bits), tuple(tail))


def public_permutation(U: int, shared_seed) -> np.ndarray:
    """``rank[x]`` is the position of ``x`` under the shared permutation."""
    key = int.from_bytes(prf(as_seed(shared_seed), "codec-permutation", 16), "little")
    rank = np.empty(U, dtype=np.int64)
    rank[np.random.default_rng(key).permutation(U)] = np.arange(U)
    return rank


def _fill(T: set[int], pool, target: int, rank: np.ndarray) -> None:
    """Add the ``target - |T|`` lowest-ranked elements of ``pool \\ T`` to ``T``."""
    need = target - len(T)
    if need <= 0:
        return
    candidates = sorted((x for x in pool if x not in T), key=lambda x: rank[x])
    if len(candidates) < need:
        raise ValueError("not enough elements to fill T")
    T.update(candidates[:need])


def encode(S, p: UrParams, protocol: UrProtocol, shared_seed, private_seed) -> EncRecord:
    S = frozenset(S)
    if len(S) != p.m:
        raise ValueError(f"|S| = {len(S)} but the distribution fixes m = {p.m}")
    if not all(0 <= x < p.U for x in S):
        raise ValueError(f"S must lie in [0, {p.U})")
    rng = np.random.default_rng(private_seed)
    i0 = int(rng.integers(p.rounds))
    t0 = frozenset(rng.choice(sorted(S), size=p.schedule[i0], replace=False).tolist())
    message = protocol.alice(S)
    rank = public_permutation(p.U, shared_seed)
    T = set(t0)
    A: set[int] = set()
    bits = []
    for i in range(i0, p.rounds):
        x = protocol.bob(message, frozenset(T))
        if x is not None and x in S and x not in T:
            A.add(x)
            T.add(x)
            bits.append(1)
        else:
            bits.append(0)
        _fill(T, S, p.next_size(i), rank)
    tail = sorted(S - A - t0)
    return EncRecord(tuple(sorted(t0)), message, tuple(bits), tuple(tail))


def decode(rec: EncRecord, p: UrParams, protocol: UrProtocol, shared_seed) -> frozenset[int]:
    rank = public_permutation(p.U, shared_seed)
    i0 = p.size_index(len(rec.t0))
    if len(rec.bits) != p.rounds - i0:
        raise ValueError(f"expected {p.rounds - i0} accept bits, got {len(rec.bits)}")
    T = set(rec.t0)
    tail = set(rec.tail)
    for i, bit in zip(range(i0, p.rounds), rec.bits):
        x = protocol.bob(rec.message, frozenset(T))
        if bit:
            T.add(x)
        _fill(T, tail, p.next_size(i), rank)
    return frozenset(T)
