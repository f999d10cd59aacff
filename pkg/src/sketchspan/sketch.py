"""Linear support-finding sketch over a sparse integer vector.

Each repetition hashes every index to a geometric depth; level ``l`` of that
repetition holds the indices of depth ``>= l``, so level ``l`` keeps an index
with probability ``2**-l``. Every (level, repetition) cell is an exact
one-sparse tester: a count, an index sum and one or more polynomial
fingerprints ``sum z_j * rho**j`` over GF(2**61 - 1).

The state is a linear function of the vector, so two sketches with the same
parameters and seed add cell-wise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from sketchspan.field import (
    FIELD_BITS,
    P,
    SEED_BYTES,
    as_seed,
    index_hash,
    mul_pow2_32,
    pack61,
    packed_bytes,
    prf_int,
    to_signed,
    trailing_zeros,
    unpack61,
)

#: repetitions per level are ``ceil(REPS_PER_LOG * log2(1/delta1))``
REPS_PER_LOG = 4

_HEADER = struct.Struct("<QIddHHBQ")
_PREFIX = struct.Struct("<I")
HEADER_BYTES = _PREFIX.size + _HEADER.size + SEED_BYTES
HEADER_BITS = 8 * HEADER_BYTES


class SketchError(ValueError):
    """Invalid sketch parameters or malformed sketch bytes."""


class IncompatibleSketches(SketchError):
    """Attempt to combine sketches with different parameters or seeds."""


@dataclass(frozen=True)
class SketchParams:
    universe_size: int
    k: int
    delta1: float
    delta2: float
    num_levels: int
    num_reps: int
    num_fingerprints: int = 1
    field_modulus: int = P

    @classmethod
    def create(cls, universe_size: int, k: int = 1, delta1: float = 0.05,
               delta2: float = 0.05) -> SketchParams:
        if universe_size < 1:
            raise SketchError(f"universe size must be positive, got {universe_size}")
        if k < 1:
            raise SketchError(f"k must be positive, got {k}")
        for name, d in (("delta1", delta1), ("delta2", delta2)):
            if not 0.0 < d < 1.0:
                raise SketchError(f"{name} must lie in (0, 1), got {d}")
        if universe_size >= P:
            raise SketchError("universe size must be below the field modulus")
        num_levels = (universe_size - 1).bit_length() + 1
        num_reps = max(1, math.ceil(REPS_PER_LOG * math.log2(1.0 / delta1)))
        # union bound over every decodable cell: cells * (N/p)**f <= delta2
        cells_log = math.log2(num_levels * num_reps)
        per_fp = math.log2(universe_size) - math.log2(P)
        num_fp = 1
        while cells_log + num_fp * per_fp > math.log2(delta2):
            num_fp += 1
        return cls(universe_size, k, float(delta1), float(delta2),
                   num_levels, num_reps, num_fp)

    @property
    def num_fields(self) -> int:
        return 2 + self.num_fingerprints

    @property
    def cell_shape(self) -> tuple[int, int, int]:
        return (self.num_levels, self.num_reps, self.num_fields)

    @property
    def payload_bits(self) -> int:
        """Bits of cell state: fields * levels * reps * ceil(log2 p)."""
        return self.num_fields * self.num_levels * self.num_reps * FIELD_BITS

    @property
    def padding_bits(self) -> int:
        return -self.payload_bits % 8

    @property
    def size_bits(self) -> int:
        return HEADER_BITS + self.payload_bits + self.padding_bits

    @property
    def size_bytes(self) -> int:
        return self.size_bits // 8


@dataclass(frozen=True)
class SketchRandomness:
    """Hash keys per repetition and fingerprint evaluation points."""

    keys: np.ndarray
    rhos: tuple[int, ...]

    def depths(self, index: int) -> np.ndarray:
        return trailing_zeros(index_hash(self.keys, index))


@lru_cache(maxsize=4096)
def randomness(seed: bytes, num_reps: int, num_fingerprints: int) -> SketchRandomness:
    keys = np.array([prf_int(seed, f"rep:{j}") for j in range(num_reps)], dtype=np.uint64)
    keys.setflags(write=False)
    rhos = tuple(2 + prf_int(seed, f"rho:{f}") % (P - 3) for f in range(num_fingerprints))
    return SketchRandomness(keys, rhos)


def update_values(index: int, delta: int, rhos: tuple[int, ...]) -> list[int]:
    """Residues added to a cell that receives ``z[index] += delta``."""
    d = delta % P
    return [d, index * d % P] + [d * pow(rho, index, P) % P for rho in rhos]


def update_plan(depth: np.ndarray, num_levels: int, num_fields: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat positions ``(k, F)`` of the cells an update reaches, and the
    flattened leading-dimension index of each reached cell."""
    reached = np.flatnonzero(np.arange(num_levels)[:, None] <= depth[..., None, :])
    return reached[:, None] * num_fields + np.arange(num_fields), reached // (num_levels * depth.shape[-1])


def apply_plan(cells: np.ndarray, plan: tuple[np.ndarray, np.ndarray], values: np.ndarray) -> None:
    pos, lead = plan
    if not cells.flags.c_contiguous:
        raise ValueError("cell arrays must be C-contiguous to update in place")
    flat = cells.reshape(-1)
    total = flat[pos] + values.reshape(-1, cells.shape[-1])[lead]
    total[total >= np.uint64(P)] -= np.uint64(P)
    flat[pos] = total


def apply_update(cells: np.ndarray, depth: np.ndarray, values: np.ndarray) -> None:
    """Add ``values`` to every cell at level ``<= depth`` of its repetition.

    ``cells`` has shape ``(..., L, reps, F)``, ``depth`` ``(..., reps)`` and
    ``values`` ``(..., F)``.
    """
    apply_plan(cells, update_plan(depth, cells.shape[-3], cells.shape[-1]), values)


def batch_cells(depth: np.ndarray, values: np.ndarray, num_levels: int) -> np.ndarray:
    """Cells holding the sum of ``k`` updates, built in one pass.

    ``depth`` has shape ``(k, ..., reps)`` and ``values`` ``(k, ..., F)``; the
    result is ``(..., L, reps, F)``. Each update lands in the bucket of its
    capped depth and a suffix sum over levels spreads it to every level below.
    """
    k, *lead, reps = depth.shape
    fields = values.shape[-1]
    groups = math.prod(lead)
    capped = np.minimum(depth, num_levels - 1).reshape(k, groups, reps)
    top = int(capped.max()) + 1  # levels above every update stay zero
    bucket = ((np.arange(groups)[:, None] * top + capped) * reps + np.arange(reps)).reshape(-1)
    rows = np.broadcast_to(values.reshape(k, groups, 1, fields), (k, groups, reps, fields)).reshape(-1, fields)
    shape = (groups, top, reps, fields)
    # at most 8 residues below 2**61 fit in a uint64; beyond that sum 32-bit halves
    parts = (rows,) if k <= 8 else (rows & np.uint64(0xFFFFFFFF), rows >> np.uint64(32))
    sums = []
    for part in parts:
        acc = np.zeros(shape, dtype=np.uint64)
        np.add.at(acc.reshape(-1, fields), bucket, part)
        sums.append(np.flip(np.cumsum(np.flip(acc, axis=1), axis=1), axis=1) % np.uint64(P))
    if len(sums) == 2:
        sums = [(mul_pow2_32(sums[1]) + sums[0]) % np.uint64(P)]
    cells = np.zeros((groups, num_levels, reps, fields), dtype=np.uint64)
    cells[:, :top] = sums[0]
    return cells.reshape(tuple(lead) + cells.shape[1:])


def one_sparse_decode(cell: np.ndarray | list[int], rhos: tuple[int, ...],
                      universe_size: int) -> tuple[int, int] | None:
    """Decode a cell as a one-sparse vector, or return None.

    ``cell`` is ``(count, index_sum, fingerprint...)``. The value is the count
    read as a signed residue; the index is ``index_sum / count`` in the field
    and must lie in range and match every fingerprint.
    """
    count, index_sum, *fps = (int(c) for c in cell)
    if count == 0:
        return None
    index = index_sum * pow(count, -1, P) % P
    if index >= universe_size:
        return None
    for rho, fp in zip(rhos, fps):
        if count * pow(rho, index, P) % P != fp:
            return None
    return index, to_signed(count)


@dataclass(frozen=True)
class SupportResult:
    """Query outcome: ``failed`` or a tuple of support indices."""

    indices: tuple[int, ...] = ()
    failed: bool = False

    @classmethod
    def fail(cls) -> SupportResult:
        return cls((), True)


class SupportFindSketch:
    """Support-finding sketch of a vector in ``Z^N`` under turnstile updates."""

    def __init__(self, params: SketchParams, seed: int | bytes,
                 cells: np.ndarray | None = None):
        self.params = params
        self.seed = as_seed(seed)
        if cells is None:
            cells = np.zeros(params.cell_shape, dtype=np.uint64)
        elif cells.shape != params.cell_shape:
            raise SketchError(f"cell array shape {cells.shape} != {params.cell_shape}")
        self.cells = cells

    @property
    def randomness(self) -> SketchRandomness:
        return randomness(self.seed, self.params.num_reps, self.params.num_fingerprints)

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.params.universe_size:
            raise IndexError(f"index {index} outside [0, {self.params.universe_size})")

    def update(self, index: int, delta: int) -> SupportFindSketch:
        """Apply ``z[index] += delta`` in place and return self."""
        self._check_index(index)
        rnd = self.randomness
        values = np.array(update_values(index, delta, rnd.rhos), dtype=np.uint64)
        apply_update(self.cells, rnd.depths(index), values)
        return self

    @classmethod
    def from_vector(cls, params: SketchParams, seed: int | bytes,
                    vector: dict[int, int]) -> SupportFindSketch:
        s = cls(params, seed)
        for index, value in vector.items():
            if value:
                s.update(index, value)
        return s

    def compatible(self, other: SupportFindSketch) -> bool:
        return self.params == other.params and self.seed == other.seed

    def __add__(self, other: SupportFindSketch) -> SupportFindSketch:
        if not self.compatible(other):
            raise IncompatibleSketches("sketches differ in parameters or seed")
        return SupportFindSketch(self.params, self.seed, (self.cells + other.cells) % np.uint64(P))

    def __neg__(self) -> SupportFindSketch:
        return SupportFindSketch(self.params, self.seed, (np.uint64(P) - self.cells) % np.uint64(P))

    def __sub__(self, other: SupportFindSketch) -> SupportFindSketch:
        return self + (-other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SupportFindSketch):
            return NotImplemented
        return self.compatible(other) and np.array_equal(self.cells, other.cells)

    def copy(self) -> SupportFindSketch:
        return SupportFindSketch(self.params, self.seed, self.cells.copy())

    def is_zero(self) -> bool:
        return not self.cells.any()

    def decode_cell(self, level: int, rep: int) -> tuple[int, int] | None:
        return one_sparse_decode(self.cells[level, rep], self.randomness.rhos,
                                 self.params.universe_size)

    def query(self) -> SupportResult:
        return query_cells(self.cells, self.randomness, self.params)

    @property
    def size_bits(self) -> int:
        return self.params.size_bits

    def to_bytes(self) -> bytes:
        return header_bytes(self.params, self.seed) + pack61(self.cells)

    @classmethod
    def from_bytes(cls, data: bytes) -> SupportFindSketch:
        s, rest = read_sketch(data)
        if rest:
            raise SketchError(f"{len(rest)} trailing bytes after sketch")
        return s

    def __repr__(self) -> str:
        p = self.params
        return (f"SupportFindSketch(N={p.universe_size}, k={p.k}, levels={p.num_levels}, "
                f"reps={p.num_reps}, seed={self.seed.hex()[:8]}...)")


def new_support_find(universe_size: int, k: int, delta1: float, delta2: float,
                     seed: int | bytes) -> SupportFindSketch:
    return SupportFindSketch(SketchParams.create(universe_size, k, delta1, delta2), seed)


def query_cells(cells: np.ndarray, rnd: SketchRandomness, params: SketchParams) -> SupportResult:
    """Scan cells from the sparsest level down for verified one-sparse cells."""
    counts = cells[..., 0]
    if not cells.any():
        return SupportResult(())
    found: list[int] = []
    levels, reps = np.nonzero(counts[::-1])
    for rev_level, rep in zip(levels.tolist(), reps.tolist()):
        level = params.num_levels - 1 - rev_level
        decoded = one_sparse_decode(cells[level, rep], rnd.rhos, params.universe_size)
        if decoded is None:
            continue
        index = decoded[0]
        if index in found:
            continue
        # an index sitting in a level it was not hashed into is a collision
        depth = int(trailing_zeros(index_hash(rnd.keys[rep:rep + 1], index))[0])
        if depth < level:
            continue
        found.append(index)
        if len(found) == params.k:
            break
    if not found:
        return SupportResult.fail()
    return SupportResult(tuple(found))


def header_bytes(params: SketchParams, seed: bytes) -> bytes:
    body = _HEADER.pack(params.universe_size, params.k, params.delta1, params.delta2,
                        params.num_levels, params.num_reps, params.num_fingerprints,
                        params.field_modulus) + seed
    length = len(body) + packed_bytes(int(np.prod(params.cell_shape)))
    return _PREFIX.pack(length) + body


def read_sketch(data: bytes | memoryview) -> tuple[SupportFindSketch, memoryview]:
    """Parse one length-prefixed sketch; return it and the remaining bytes."""
    view = memoryview(data)
    if len(view) < HEADER_BYTES:
        raise SketchError("truncated sketch header")
    (length,) = _PREFIX.unpack_from(view, 0)
    if len(view) < _PREFIX.size + length:
        raise SketchError("truncated sketch body")
    n, k, d1, d2, levels, reps, fps, modulus = _HEADER.unpack_from(view, _PREFIX.size)
    if modulus != P:
        raise SketchError(f"unsupported field modulus {modulus}")
    params = SketchParams(n, k, d1, d2, levels, reps, fps, modulus)
    if params != SketchParams.create(n, k, d1, d2):
        raise SketchError("sketch header is not a valid parameter set")
    start = _PREFIX.size + _HEADER.size
    seed = bytes(view[start:start + SEED_BYTES])
    count = int(np.prod(params.cell_shape))
    end = _PREFIX.size + length
    if end - start - SEED_BYTES != packed_bytes(count):
        raise SketchError("length prefix disagrees with header")
    try:
        cells = unpack61(bytes(view[start + SEED_BYTES:end]), count)
    except ValueError as exc:
        raise SketchError(str(exc)) from exc
    return SupportFindSketch(params, seed, cells.reshape(params.cell_shape)), view[end:]
