"""Simultaneous-message model: vertices sketch, a referee recovers a forest.

Each vertex sees only its own id, its neighbour list and the public seed, and
sends the ``R`` round sketches of its incidence vector. The referee loads the
messages into a bank and runs the ordinary AGM query, so its answer matches a
centralised bank built from the same graph and seed exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from sketchspan.agm import AgmParams, SpanningForest, VertexSketchBank, edge_index, round_tables, zero_cells
from sketchspan.field import as_seed
from sketchspan.graph import ExactGraph, verify_forest
from sketchspan.sketch import SketchError, batch_cells


@dataclass(frozen=True)
class VertexView:
    vertex: int
    neighbors: tuple[int, ...]
    n: int
    shared_seed: bytes


def vertex_views(g: ExactGraph, shared_seed: int | bytes) -> list[VertexView]:
    seed = as_seed(shared_seed)
    return [VertexView(u, tuple(nbrs), g.n, seed) for u, nbrs in enumerate(g.neighbors())]


class Message:
    """One vertex's message: its serialized round sketches.

    The cells are kept alongside so a referee in the same process can skip
    re-parsing; ``payload`` is materialised on first access.
    """

    def __init__(self, vertex: int, params: AgmParams, shared_seed: bytes, cells: np.ndarray,
                 payload: bytes | None = None):
        self.vertex = vertex
        self.params = params
        self.shared_seed = shared_seed
        self.cells = cells
        self._payload = payload

    @property
    def payload(self) -> bytes:
        if self._payload is None:
            bank = VertexSketchBank(self.params, self.shared_seed)
            bank.set_vertex_cells(self.vertex, self.cells)
            self._payload = bank.vertex_bytes(self.vertex)
        return self._payload

    @property
    def bit_length(self) -> int:
        return self.params.rounds * self.params.sketch_params.size_bits

    @classmethod
    def from_payload(cls, vertex: int, payload: bytes, params: AgmParams,
                     shared_seed: int | bytes) -> Message:
        seed = as_seed(shared_seed)
        bank = VertexSketchBank(params, seed)
        rest = bank.load_vertex_bytes(vertex, payload)
        if len(rest):
            raise SketchError(f"{len(rest)} trailing bytes in message of vertex {vertex}")
        return cls(vertex, params, seed, bank.vertex_cells(vertex), bytes(payload))


def vertex_message(view: VertexView, params: AgmParams, shared_seed: int | bytes) -> Message:
    """Sketch ``z_u`` in every round from the vertex's own neighbourhood."""
    seed = as_seed(shared_seed)
    u = view.vertex
    for w in view.neighbors:
        if w == u or not 0 <= w < params.n:
            raise ValueError(f"vertex {u}: invalid neighbour {w}")
    shape = (params.rounds,) + params.sketch_params.cell_shape
    if not view.neighbors:
        return Message(u, params, seed, zero_cells(shape))
    tables = round_tables(params, seed)
    sp = params.sketch_params
    updates = [tables.update_values(edge_index(u, w, params.n), 1 if u < w else -1) for w in view.neighbors]
    depth = np.stack([d for d, _ in updates])  # (deg, R, reps)
    values = np.stack([v for _, v in updates])  # (deg, R, F)
    cells = batch_cells(depth, values, sp.num_levels)
    cells.setflags(write=False)
    return Message(u, params, seed, cells)


def referee_bank(messages: list[Message], params: AgmParams, shared_seed: int | bytes) -> VertexSketchBank:
    seed = as_seed(shared_seed)
    if len(messages) != params.n:
        raise SketchError(f"expected {params.n} messages, got {len(messages)}")
    bank = VertexSketchBank(params, seed)
    zero = zero_cells(bank.vertex_shape)
    for u, msg in enumerate(messages):
        if msg.vertex != u:
            raise SketchError(f"message {u} is from vertex {msg.vertex}")
        if msg.params != params or msg.shared_seed != seed:
            msg = Message.from_payload(u, msg.payload, params, seed)
        if msg.cells is not zero:
            bank.set_vertex_cells(u, msg.cells)
    return bank


def referee_decode(messages: list[Message], params: AgmParams, shared_seed: int | bytes) -> SpanningForest:
    return referee_bank(messages, params, shared_seed).query()


@dataclass
class SimReport:
    n: int
    delta: float
    forest: SpanningForest
    avg_message_bits: float
    max_message_bits: int
    valid: bool
    reasons: list[str] = field(default_factory=list)


def simulate(g: ExactGraph, delta: float, seed: int | bytes) -> SimReport:
    """Run the one-round protocol on ``g`` and check the referee's forest."""
    params = AgmParams.create(g.n, delta)
    views = vertex_views(g, seed)
    # a pure memo: each vertex still sketches only its own incident edges
    round_tables(params, as_seed(seed)).prefetch([edge_index(u, v, g.n) for u, v in g.edges])
    messages = [vertex_message(v, params, seed) for v in views]
    forest = referee_decode(messages, params, seed)
    report = verify_forest(forest, g)
    bits = [m.bit_length for m in messages]
    return SimReport(g.n, delta, forest, sum(bits) / len(bits), max(bits), report.is_valid, report.reasons)


def read_edge_list(text: str) -> ExactGraph:
    """Parse ``n <N>`` followed by ``u v`` lines (``#`` starts a comment)."""
    g = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if g is None:
            if len(tokens) != 2 or tokens[0] != "n" or not tokens[1].isdigit():
                raise ValueError(f"line {lineno}: expected header 'n <count>'")
            g = ExactGraph(int(tokens[1]))
            continue
        if len(tokens) != 2 or not all(t.isdigit() for t in tokens):
            raise ValueError(f"line {lineno}: expected 'u v'")
        try:
            g.insert(int(tokens[0]), int(tokens[1]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if g is None:
        raise ValueError("missing 'n <count>' header")
    return g


SIM_CSV_FIELDS = ["n", "delta", "seed", "valid", "avg_bits", "max_bits"]


def write_sim_csv(path, rows: list[tuple[int, SimReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIM_CSV_FIELDS)
        for seed, rep in rows:
            w.writerow([rep.n, rep.delta, seed, str(rep.valid).lower(), rep.avg_message_bits, rep.max_message_bits])
