"""AGM fully dynamic spanning-forest sketch with failure probability delta.

Every vertex ``u`` keeps ``R`` support-finding sketches of its signed
edge-incidence vector ``z_u``: the pair ``(a, b)`` with ``a < b`` carries
``+1`` in ``z_a`` and ``-1`` in ``z_b``. All vertices share one sketch
randomness per round, so summing the round-``r`` sketches over a vertex set
sketches exactly the edges leaving that set. A query runs Boruvka-style
rounds, asking each current component for one outgoing edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from sketchspan.field import P, as_seed, derive_seed, index_hash, pow_mod, segment_sum_mod, trailing_zeros
from sketchspan.sketch import (
    SketchError,
    SketchParams,
    SketchRandomness,
    SupportFindSketch,
    apply_plan,
    header_bytes,
    pack61,
    query_cells,
    randomness,
    read_sketch,
    update_plan,
)
from sketchspan.unionfind import UnionFind

#: cap on the per-query Fail probability; keeps 6e * delta_prime <= 1/2
DELTA_PRIME_CAP = 1.0 / (12.0 * math.e)


class SelfLoopError(ValueError):
    pass


def ceil_log_three_halves(n: int) -> int:
    return math.ceil(math.log(n) / math.log(1.5))


@dataclass(frozen=True)
class AgmParams:
    n: int
    delta: float
    delta_prime: float
    rounds: int
    delta_dprime: float
    edge_universe: int

    @classmethod
    def create(cls, n: int, delta: float) -> AgmParams:
        if n < 2:
            raise ValueError(f"need at least two vertices, got n={n}")
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        if math.log2(delta) <= -n:
            raise ValueError(f"delta must exceed 2**-n, got {delta}")
        log_n = math.log2(n)
        exponent = (log_n - math.log2(delta)) / log_n  # log2(1/delta') before capping
        if 2.0 ** -exponent < DELTA_PRIME_CAP:
            delta_prime = 2.0 ** -exponent
            divisor = exponent - math.log2(6 * math.e)
        else:
            delta_prime = DELTA_PRIME_CAP
            divisor = 1.0  # log2(1 / (6e * delta')) at the cap
        base = ceil_log_three_halves(n)
        amplify = math.ceil((1.0 - math.log2(delta)) / divisor)
        rounds = base + max(base, amplify)
        return cls(n, delta, delta_prime, rounds, delta / (2 * n * rounds), n * (n - 1) // 2)

    @property
    def sketch_params(self) -> SketchParams:
        return _sketch_params(self.edge_universe, self.delta_prime, self.delta_dprime)


@lru_cache(maxsize=256)
def _sketch_params(universe: int, delta_prime: float, delta_dprime: float) -> SketchParams:
    return SketchParams.create(universe, 1, delta_prime, delta_dprime)


def edge_index(u: int, v: int, n: int) -> int:
    """Position of the unordered pair {u, v} in the row-major upper triangle."""
    if u == v:
        raise SelfLoopError(f"self-loop at vertex {u}")
    a, b = (u, v) if u < v else (v, u)
    if a < 0 or b >= n:
        raise IndexError(f"edge ({u}, {v}) outside [0, {n})")
    return a * (2 * n - a - 1) // 2 + (b - a - 1)


def edge_from_index(index: int, n: int) -> tuple[int, int]:
    if not 0 <= index < n * (n - 1) // 2:
        raise IndexError(f"edge index {index} out of range for n={n}")
    d = (2 * n - 1) ** 2 - 8 * index
    a = (2 * n - 1 - math.isqrt(d)) // 2
    while a > 0 and a * (2 * n - a - 1) // 2 > index:
        a -= 1
    while (a + 1) * (2 * n - a - 2) // 2 <= index:
        a += 1
    return a, index - a * (2 * n - a - 1) // 2 + a + 1


@dataclass(frozen=True)
class RoundTables:
    """Per-round sketch randomness shared by every vertex."""

    seeds: list[bytes]
    randomness: list[SketchRandomness]
    keys: np.ndarray  # (R, reps)
    # both endpoints of an edge apply the same index with opposite signs
    _units: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, compare=False, repr=False)

    def unit_update(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Depths ``(R, reps)`` and cell increments ``(R, F)`` for ``z[index] += 1`` (memoised, read-only)."""
        hit = self._units.get(index)
        if hit is not None:
            return hit
        values = np.array([[1, index % P] + [pow(rho, index, P) for rho in rnd.rhos]
                           for rnd in self.randomness], dtype=np.uint64)
        return self._remember(index, values)

    def prefetch(self, indices: list[int]) -> None:
        """Memoise the unit updates of many indices with one vectorised power."""
        todo = sorted({i for i in indices if i not in self._units})
        if not todo:
            return
        rhos = np.array([rnd.rhos for rnd in self.randomness], dtype=np.uint64)  # (R, F - 2)
        powers = pow_mod(rhos[None], np.array(todo, dtype=np.uint64)[:, None, None])
        for index, fps in zip(todo, powers):
            head = np.broadcast_to(np.array([1, index % P], dtype=np.uint64), (len(fps), 2))
            self._remember(index, np.concatenate([head, fps], axis=1))

    def _remember(self, index: int, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if len(self._units) >= 1 << 16:
            self._units.clear()
        depth = trailing_zeros(index_hash(self.keys, index))
        values.flags.writeable = depth.flags.writeable = False
        self._units[index] = (depth, values)
        return depth, values

    def update_values(self, index: int, delta: int) -> tuple[np.ndarray, np.ndarray]:
        """Depths ``(R, reps)`` and per-round cell increments ``(R, F)`` for ``z[index] += delta``."""
        depth, unit = self.unit_update(index)
        d = delta % P
        if d == 1:
            return depth, unit
        if d == P - 1:
            return depth, (P - unit) % np.uint64(P)
        return depth, np.array([[v * d % P for v in row] for row in unit.tolist()], dtype=np.uint64)


@lru_cache(maxsize=8)
def round_tables(params: AgmParams, shared_seed: bytes) -> RoundTables:
    sp = params.sketch_params
    seeds = [derive_seed(shared_seed, f"round:{r}") for r in range(params.rounds)]
    rnds = [randomness(s, sp.num_reps, sp.num_fingerprints) for s in seeds]
    return RoundTables(seeds, rnds, np.stack([r.keys for r in rnds]))


@dataclass
class SpanningForest:
    n: int
    edges: list[tuple[int, int]]
    components: list[list[int]]
    #: 0-based round at whose start every component had an empty cut sketch
    completed_round: int | None = None
    rounds: int = field(default=0, compare=False)


class VertexSketchBank:
    """The AGM memory: an ``n x R`` grid of support-finding sketches.

    Vertices that never received an update hold no array; they read as zero.
    """

    def __init__(self, params: AgmParams, shared_seed: int | bytes):
        self.params = params
        self.shared_seed = as_seed(shared_seed)
        self.sketch_params = params.sketch_params
        self.tables = round_tables(params, self.shared_seed)
        self.round_seeds = self.tables.seeds
        self.round_randomness = self.tables.randomness
        self._cells: dict[int, np.ndarray] = {}

    @property
    def vertex_shape(self) -> tuple[int, ...]:
        return (self.params.rounds,) + self.sketch_params.cell_shape

    def vertex_cells(self, u: int) -> np.ndarray:
        """Round-major cells of vertex ``u`` (read-only zeros if untouched)."""
        cells = self._cells.get(u)
        if cells is None:
            return zero_cells(self.vertex_shape)
        return cells

    def set_vertex_cells(self, u: int, cells: np.ndarray) -> None:
        if cells.shape != self.vertex_shape:
            raise SketchError(f"vertex cells shape {cells.shape} != {self.vertex_shape}")
        if not 0 <= u < self.params.n:
            raise IndexError(f"vertex {u} outside [0, {self.params.n})")
        if cells.any():
            self._cells[u] = cells
        else:
            self._cells.pop(u, None)

    def _writable(self, u: int) -> np.ndarray:
        cells = self._cells.get(u)
        if cells is None:
            cells = self._cells[u] = np.zeros(self.vertex_shape, dtype=np.uint64)
        elif not cells.flags.writeable:
            cells = self._cells[u] = cells.copy()
        return cells

    def update_values(self, index: int, delta: int) -> tuple[np.ndarray, np.ndarray]:
        return self.tables.update_values(index, delta)

    def update(self, u: int, v: int, delta: int) -> None:
        """Apply ``delta = +1`` (insert) or ``-1`` (delete) to the edge {u, v}."""
        n = self.params.n
        if not (0 <= u < n and 0 <= v < n):
            raise IndexError(f"edge ({u}, {v}) outside [0, {n})")
        index = edge_index(u, v, n)
        a, b = min(u, v), max(u, v)
        depth, values = self.update_values(index, delta)
        sp = self.sketch_params
        plan = update_plan(depth, sp.num_levels, sp.num_fields)
        apply_plan(self._writable(a), plan, values)
        apply_plan(self._writable(b), plan, (np.uint64(P) - values) % np.uint64(P))

    def sketch(self, u: int, r: int) -> SupportFindSketch:
        return SupportFindSketch(self.sketch_params, self.round_seeds[r], self.vertex_cells(u)[r].copy())

    def round_sum(self, vertices, r: int) -> SupportFindSketch:
        """Sum of the round-``r`` sketches of ``vertices``."""
        rows = [self._cells[u][r] for u in vertices if u in self._cells]
        total = SupportFindSketch(self.sketch_params, self.round_seeds[r])
        if rows:
            total.cells = segment_sum_mod(np.stack(rows), np.zeros(len(rows), dtype=np.int64), 1)[0]
        return total

    def query(self) -> SpanningForest:
        return agm_query(self)

    @property
    def total_size_bits(self) -> int:
        return self.params.n * self.params.rounds * self.sketch_params.size_bits

    def vertex_bytes(self, u: int) -> bytes:
        """Serialized round sketches of ``u``, round-major."""
        cells = self.vertex_cells(u)
        return b"".join(header_bytes(self.sketch_params, seed) + pack61(cells[r])
                        for r, seed in enumerate(self.round_seeds))

    def to_bytes(self) -> bytes:
        zero = None
        parts = []
        for u in range(self.params.n):
            if u in self._cells:
                parts.append(self.vertex_bytes(u))
            else:
                if zero is None:
                    zero = self.vertex_bytes(u)
                parts.append(zero)
        return b"".join(parts)

    def load_vertex_bytes(self, u: int, data: bytes | memoryview) -> memoryview:
        """Parse ``R`` round sketches for vertex ``u``; return the remainder."""
        rest = memoryview(data)
        rows = []
        for r, seed in enumerate(self.round_seeds):
            s, rest = read_sketch(rest)
            if s.params != self.sketch_params:
                raise SketchError(f"vertex {u} round {r}: sketch parameters do not match")
            if s.seed != seed:
                raise SketchError(f"vertex {u} round {r}: sketch seed does not match")
            rows.append(s.cells)
        self.set_vertex_cells(u, np.stack(rows))
        return rest

    @classmethod
    def from_bytes(cls, data: bytes, params: AgmParams, shared_seed: int | bytes) -> VertexSketchBank:
        bank = cls(params, shared_seed)
        rest = memoryview(data)
        for u in range(params.n):
            rest = bank.load_vertex_bytes(u, rest)
        if len(rest):
            raise SketchError(f"{len(rest)} trailing bytes after bank")
        return bank

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VertexSketchBank):
            return NotImplemented
        if self.params != other.params or self.shared_seed != other.shared_seed:
            return False
        for u in set(self._cells) | set(other._cells):
            if not np.array_equal(self.vertex_cells(u), other.vertex_cells(u)):
                return False
        return True


@lru_cache(maxsize=8)
def zero_cells(shape: tuple[int, ...]) -> np.ndarray:
    z = np.zeros(shape, dtype=np.uint64)
    z.setflags(write=False)
    return z


def agm_init(params: AgmParams, shared_seed: int | bytes) -> VertexSketchBank:
    return VertexSketchBank(params, shared_seed)


def agm_query(bank: VertexSketchBank) -> SpanningForest:
    """Recover a spanning forest from the bank in ``R`` merge rounds.

    Components are processed in ascending order of their smallest member. A
    decoded edge is kept only if it leaves its component; edges closing a
    cycle within the round are skipped by the union-find.
    """
    n = bank.params.n
    sp = bank.sketch_params
    uf = UnionFind(n)
    forest: list[tuple[int, int]] = []
    rows = sorted(bank._cells)
    completed = None
    for r in range(bank.params.rounds):
        labels = uf.labels()
        order = sorted(set(labels))
        slot = {label: i for i, label in enumerate(order)}
        comp = np.array([slot[label] for label in labels], dtype=np.int64)
        live: list[tuple[int, int]] = []
        if rows:
            # components with no stored rows sum to zero, so only occupied ones are summed
            occupied, group = np.unique(comp[rows], return_inverse=True)
            stacked = np.stack([bank._cells[u][r] for u in rows])
            sums = segment_sum_mod(stacked, group, len(occupied))
            nonzero = np.flatnonzero(sums.reshape(len(occupied), -1).any(axis=1))
            live = [(int(occupied[g]), int(g)) for g in nonzero]
        if not live and completed is None:
            completed = r
        found = []
        rnd = bank.round_randomness[r]
        for c, g in live:
            result = query_cells(sums[g], rnd, sp)
            if result.failed or not result.indices:
                continue
            a, b = edge_from_index(result.indices[0], n)
            if (comp[a] == c) != (comp[b] == c):
                found.append((a, b))
        for a, b in found:
            if uf.union(a, b):
                forest.append((a, b))
    return SpanningForest(n, forest, uf.groups(), completed, bank.params.rounds)
