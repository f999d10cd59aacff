"""Turnstile edge streams, the exact graph oracle and forest verification."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from sketchspan.agm import SpanningForest, VertexSketchBank
from sketchspan.unionfind import UnionFind


@dataclass(frozen=True)
class Insert:
    u: int
    v: int
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Delete:
    u: int
    v: int
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Query:
    line: int | None = field(default=None, compare=False)


StreamOp = Union[Insert, Delete, Query]


class StreamParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MultiplicityError(ValueError):
    """An insert of a present edge or a delete of an absent one."""

    def __init__(self, message: str, position: int, line: int | None = None):
        where = f"line {line}" if line is not None else f"op {position}"
        super().__init__(f"{where}: {message}")
        self.position = position
        self.line = line


class UnsupportedOperation(ValueError):
    pass


def _parse(text: str) -> tuple[int | None, list[StreamOp]]:
    n: int | None = None
    ops: list[StreamOp] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = line.split()
        if not tokens:
            continue
        cols = []
        pos = 0
        for tok in tokens:
            pos = line.index(tok, pos)
            cols.append(pos + 1)
            pos += len(tok)
        head = tokens[0]
        if head == "n":
            if n is not None or ops:
                raise StreamParseError("header 'n <count>' must come first and only once", lineno, cols[0])
            if len(tokens) != 2 or not tokens[1].isdigit() or int(tokens[1]) < 1:
                raise StreamParseError("expected 'n <count>' with a positive count", lineno, cols[-1])
            n = int(tokens[1])
        elif head == "?":
            if len(tokens) != 1:
                raise StreamParseError("query takes no arguments", lineno, cols[1])
            ops.append(Query(lineno))
        elif head in "+-":
            if len(tokens) != 3:
                raise StreamParseError(f"expected '{head} u v'", lineno, cols[0])
            ids = []
            for tok, col in zip(tokens[1:], cols[1:]):
                if not tok.isdigit():
                    raise StreamParseError(f"vertex id {tok!r} is not a non-negative integer", lineno, col)
                value = int(tok)
                if n is not None and value >= n:
                    raise StreamParseError(f"vertex {value} outside [0, {n})", lineno, col)
                ids.append(value)
            u, v = ids
            if u == v:
                raise StreamParseError(f"self-loop at vertex {u}", lineno, cols[1])
            ops.append(Insert(u, v, lineno) if head == "+" else Delete(u, v, lineno))
        else:
            raise StreamParseError(f"unknown operation {head!r}", lineno, cols[0])
    return n, ops


def parse_stream(text: str) -> list[StreamOp]:
    """Parse ``+ u v`` / ``- u v`` / ``?`` lines; an ``n <N>`` header is optional."""
    return _parse(text)[1]


def parse_stream_file(text: str) -> tuple[int, list[StreamOp]]:
    """Parse a stream file, which must declare ``n <N>`` before any op."""
    n, ops = _parse(text)
    if n is None:
        raise StreamParseError("missing 'n <count>' header", 1, 1)
    return n, ops


def format_stream(n: int, ops: Iterable[StreamOp]) -> str:
    lines = [f"n {n}"]
    for op in ops:
        if isinstance(op, Insert):
            lines.append(f"+ {op.u} {op.v}")
        elif isinstance(op, Delete):
            lines.append(f"- {op.u} {op.v}")
        else:
            lines.append("?")
    return "\n".join(lines) + "\n"


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


class ExactGraph:
    """Simple undirected graph on ``[0, n)`` kept exactly; the ground truth."""

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] = ()):
        self.n = n
        self.edges: set[tuple[int, int]] = set()
        for u, v in edges:
            self.insert(u, v)

    def _check(self, u: int, v: int) -> tuple[int, int]:
        if u == v:
            raise ValueError(f"self-loop at vertex {u}")
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise IndexError(f"edge ({u}, {v}) outside [0, {self.n})")
        return _pair(u, v)

    def has_edge(self, u: int, v: int) -> bool:
        return _pair(u, v) in self.edges

    def insert(self, u: int, v: int) -> None:
        e = self._check(u, v)
        if e in self.edges:
            raise MultiplicityError(f"edge {e} already present", -1)
        self.edges.add(e)

    def delete(self, u: int, v: int) -> None:
        e = self._check(u, v)
        if e not in self.edges:
            raise MultiplicityError(f"edge {e} not present", -1)
        self.edges.remove(e)

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edge_list():
            adj[u].append(v)
            adj[v].append(u)
        for lst in adj:
            lst.sort()
        return adj

    def copy(self) -> ExactGraph:
        g = ExactGraph(self.n)
        g.edges = set(self.edges)
        return g

    def __repr__(self) -> str:
        return f"ExactGraph(n={self.n}, m={len(self.edges)})"


def oracle_components(g: ExactGraph) -> list[list[int]]:
    """Connected components as sorted lists, ordered by smallest member."""
    uf = UnionFind(g.n)
    for u, v in g.edges:
        uf.union(u, v)
    return uf.groups()


@dataclass
class VerificationReport:
    is_valid: bool
    reasons: list[str]


def verify_forest(forest: SpanningForest, g: ExactGraph) -> VerificationReport:
    """Check that ``forest`` is a spanning forest of ``g``."""
    reasons = []
    if any(_pair(u, v) not in g.edges for u, v in forest.edges):
        reasons.append("edge-not-in-graph")
    uf = UnionFind(g.n)
    if not all(uf.union(u, v) for u, v in forest.edges):
        reasons.append("cycle")
    truth = oracle_components(g)
    if len(forest.edges) != g.n - len(truth):
        reasons.append("wrong-edge-count")
    if uf.groups() != truth:
        reasons.append("components-mismatch")
    return VerificationReport(not reasons, reasons)


def apply_op(bank: VertexSketchBank | None, oracle: ExactGraph, op: StreamOp, position: int) -> None:
    """Apply one insert/delete to the oracle and, in lockstep, the bank."""
    try:
        if isinstance(op, Insert):
            oracle.insert(op.u, op.v)
        else:
            oracle.delete(op.u, op.v)
    except MultiplicityError as exc:
        raise MultiplicityError(str(exc).split(": ", 1)[1], position, op.line) from None
    if bank is not None:
        bank.update(op.u, op.v, +1 if isinstance(op, Insert) else -1)


def apply_stream(bank: VertexSketchBank, oracle: ExactGraph,
                 ops: Iterable[StreamOp]) -> list[tuple[SpanningForest, VerificationReport]]:
    """Run ``ops`` against bank and oracle; verify the bank's answer at each query."""
    results = []
    for position, op in enumerate(ops):
        if isinstance(op, Query):
            forest = bank.query()
            results.append((forest, verify_forest(forest, oracle)))
        else:
            apply_op(bank, oracle, op, position)
    return results


def incremental_baseline(ops: Iterable[StreamOp], n: int) -> SpanningForest:
    """Insert-only spanning forest: keep an edge iff it joins two trees."""
    uf = UnionFind(n)
    edges = []
    for position, op in enumerate(ops):
        if isinstance(op, Delete):
            raise UnsupportedOperation(f"op {position}: the insert-only baseline cannot delete edges")
        if isinstance(op, Insert):
            if op.u == op.v or not (0 <= op.u < n and 0 <= op.v < n):
                raise ValueError(f"op {position}: invalid edge ({op.u}, {op.v})")
            if uf.union(op.u, op.v):
                edges.append(_pair(op.u, op.v))
    return SpanningForest(n, edges, uf.groups())


def random_dynamic_stream(n: int, rng: np.random.Generator, inserts: int | None = None,
                          delete_fraction: float = 0.5, queries: int = 1) -> list[StreamOp]:
    """Random simple-graph stream: inserts interleaved with deletes of live
    edges, ending in ``queries`` queries spread over the second half."""
    if inserts is None:
        inserts = n
    inserts = min(inserts, n * (n - 1) // 2)
    live: list[tuple[int, int]] = []
    present: set[tuple[int, int]] = set()
    ops: list[StreamOp] = []
    deletes = int(round(delete_fraction * inserts))
    schedule = ["+"] * inserts + ["-"] * deletes
    rng.shuffle(schedule)
    pending_deletes = 0
    for kind in schedule:
        if kind == "-":
            pending_deletes += 1
        while pending_deletes and live:
            j = int(rng.integers(len(live)))
            e = live[j]
            live[j] = live[-1]
            live.pop()
            present.discard(e)
            ops.append(Delete(*e))
            pending_deletes -= 1
        if kind == "+":
            while True:
                u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
                e = _pair(u, v)
                if e not in present:
                    break
            present.add(e)
            live.append(e)
            ops.append(Insert(*e))
    if queries:
        half = len(ops) // 2
        spots = sorted(rng.choice(np.arange(half, len(ops) + 1), size=queries - 1, replace=True).tolist()) \
            if queries > 1 else []
        for offset, spot in enumerate(spots):
            ops.insert(spot + offset, Query())
        ops.append(Query())
    return ops


def write_query_csv(path, results: list[tuple[SpanningForest, VerificationReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_index", "valid", "forest_edge_count", "component_count"])
        for i, (forest, report) in enumerate(results):
            w.writerow([i, str(report.is_valid).lower(), len(forest.edges), len(forest.components)])
