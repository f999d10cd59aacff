"""Hard graph families for distributed spanning forest.

With ``q = n**(1/5)`` a graph has ``q**4`` vertices split into hubs ``V_m``
(``q**3 // 2`` of them), one private block of ``q`` vertices per hub
(together ``V_l``), a shared group ``V_r`` of ``q`` vertices and isolated
leftovers ``V_o``. A hub's neighbourhood encodes a subset-relation instance:
``T`` inside its block, ``S \\ T`` inside ``V_r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sketchspan.agm import SpanningForest
from sketchspan.graph import ExactGraph
from sketchspan.lab.ur import UrInstance, UrParams, sample_d_ur


class SizeError(ValueError):
    pass


def fifth_root(n: int) -> int:
    q = round(n ** 0.2)
    for c in (q - 1, q, q + 1):
        if c >= 0 and c ** 5 == n:
            q = c
            break
    else:
        raise SizeError(f"n = {n} is not a perfect fifth power")
    if q < 4:
        raise SizeError(f"n**(1/5) = {q} < 4 leaves groups too small")
    return q


@dataclass
class DskGraph:
    n: int
    q: int
    hubs: list[int]
    blocks: list[list[int]]
    right: list[int]
    isolated: list[int]
    graph: ExactGraph
    instances: list[UrInstance] = field(default_factory=list)

    @property
    def num_vertices(self) -> int:
        return self.q ** 4


def _layout(q: int, rng: np.random.Generator) -> tuple[list[int], list[int], list[list[int]], list[int]]:
    num_hubs = q ** 3 // 2
    perm = rng.permutation(q ** 4).tolist()
    hubs = perm[:num_hubs]
    right = perm[num_hubs:num_hubs + q]
    flat = perm[num_hubs + q:num_hubs + q + num_hubs * q]
    blocks = [flat[j * q:(j + 1) * q] for j in range(num_hubs)]
    isolated = perm[num_hubs + q + num_hubs * q:]
    return hubs, right, blocks, isolated


def _connect_hub(g: ExactGraph, hub: int, block: list[int], right: list[int],
                 inst: UrInstance, rng: np.random.Generator) -> None:
    for x in rng.choice(block, size=len(inst.T), replace=False).tolist():
        g.insert(hub, x)
    for y in rng.choice(right, size=len(inst.S) - len(inst.T), replace=False).tolist():
        g.insert(hub, y)


def _check_ur(q: int, ur: UrParams) -> None:
    if ur.U != q:
        raise SizeError(f"instances must live on [n**(1/5)] = [{q}], got U = {ur.U}")


def sample_d_sk(n: int, ur: UrParams, seed) -> DskGraph:
    q = fifth_root(n)
    _check_ur(q, ur)
    rng = np.random.default_rng(seed)
    hubs, right, blocks, isolated = _layout(q, rng)
    g = ExactGraph(q ** 4)
    instances = []
    for hub, block in zip(hubs, blocks):
        inst = sample_d_ur(ur, rng)
        instances.append(inst)
        _connect_hub(g, hub, block, right, inst, rng)
    return DskGraph(n, q, hubs, blocks, right, isolated, g, instances)


def dsk_violations(d: DskGraph) -> list[str]:
    """Structural problems of a D_sk-shaped graph (empty when well formed)."""
    problems = []
    block_of = {x: j for j, block in enumerate(d.blocks) for x in block}
    hub_index = {h: j for j, h in enumerate(d.hubs)}
    right = set(d.right)
    for u, v in d.graph.edge_list():
        ends = []
        for a, b in ((u, v), (v, u)):
            if a in hub_index:
                j = hub_index[a]
                if b in right:
                    ends.append("hub-right")
                elif block_of.get(b) == j:
                    ends.append("hub-block")
        if not ends:
            problems.append(f"edge ({u}, {v}) is neither hub-block nor hub-right")
    # a block together with its hub may only be left through hub-to-right edges
    for j, (hub, block) in enumerate(zip(d.hubs, d.blocks)):
        inside = set(block) | {hub}
        for u, v in d.graph.edges:
            if (u in inside) != (v in inside):
                a, b = (u, v) if u in inside else (v, u)
                if a != hub or b not in right:
                    problems.append(f"block {j}: cut edge ({a}, {b}) escapes other than hub->V_r")
    return problems


def sample_group_degree(group: str, q: int, ur: UrParams, rng: np.random.Generator) -> int:
    """Degree of a uniformly random ``V_m`` (``"m"``) or ``V_r`` (``"r"``) vertex
    in a fresh D_sk draw; only the parts of the draw that fix it are sampled."""
    if group == "m":
        inst = sample_d_ur(ur, rng)
        return len(inst.S)
    if group == "r":
        # hub j links to a uniform (m - r_{i_j})-subset of V_r, which holds a
        # fixed vertex with probability (m - r_{i_j}) / q
        sizes = np.asarray(ur.schedule)[rng.integers(ur.rounds, size=q ** 3 // 2)]
        return int((rng.random(sizes.size) < (ur.m - sizes) / q).sum())
    raise ValueError(f"group must be 'm' or 'r', got {group!r}")


@dataclass
class DskPrimeSample:
    case: int
    graph: ExactGraph
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    dsk: DskGraph | None = None


def draw_case(rng: np.random.Generator) -> int:
    """The mixture component of a D'_sk draw: 1, 2 or 3 with probability 1/3 each."""
    return int(rng.integers(3)) + 1


def sample_d_sk_prime(n: int, ur: UrParams, seed) -> DskPrimeSample:
    """Mixture: D_sk (case 1), or a half split where one side draws hub
    degrees (case 2) or ``V_r`` degrees (case 3), each with probability 1/3."""
    q = fifth_root(n)
    _check_ur(q, ur)
    rng = np.random.default_rng(seed)
    case = draw_case(rng)
    if case == 1:
        d = sample_d_sk(n, ur, rng)
        return DskPrimeSample(1, d.graph, dsk=d)
    perm = rng.permutation(q ** 4).tolist()
    half = q ** 4 // 2
    left, right = perm[:half], perm[half:]
    g = ExactGraph(q ** 4)
    group = "m" if case == 2 else "r"
    for u in left:
        d = sample_group_degree(group, q, ur, rng)
        for w in rng.choice(right, size=d, replace=False).tolist():
            g.insert(u, w)
    return DskPrimeSample(case, g, left, right)


@dataclass
class Embedding:
    dsk: DskGraph
    hub_index: int
    beta: tuple[int, ...]  # beta[x] is the vertex standing for element x
    S: frozenset[int]
    T: frozenset[int]

    @property
    def hub(self) -> int:
        return self.dsk.hubs[self.hub_index]


def embed_ur_in_dsk(S, T, n: int, ur: UrParams, seed) -> Embedding:
    """Plant ``(S, T)`` at a random hub of a D_sk graph through a random injection."""
    q = fifth_root(n)
    _check_ur(q, ur)
    S, T = frozenset(S), frozenset(T)
    if not T < S or not S <= set(range(q)):
        raise SizeError(f"need T strictly inside S inside [0, {q})")
    rng = np.random.default_rng(seed)
    num_hubs = q ** 3 // 2
    perm = rng.permutation(q ** 4).tolist()
    hubs, rest = perm[:num_hubs], perm[num_hubs:]
    beta = tuple(rest[:q])
    pool = rest[q:]
    i = int(rng.integers(num_hubs))
    missing_block = q - len(T)
    missing_right = len(T)
    block_i = [beta[x] for x in sorted(T)] + pool[:missing_block]
    right = [beta[x] for x in range(q) if x not in T] + pool[missing_block:missing_block + missing_right]
    pool = pool[missing_block + missing_right:]
    blocks = []
    for j in range(num_hubs):
        if j == i:
            blocks.append(block_i)
        else:
            blocks.append(pool[:q])
            pool = pool[q:]
    isolated = pool
    g = ExactGraph(q ** 4)
    instances: list[UrInstance] = []
    for j, (hub, block) in enumerate(zip(hubs, blocks)):
        if j == i:
            for x in sorted(S):
                g.insert(hub, beta[x])
            instances.append(UrInstance(S, T))
        else:
            inst = sample_d_ur(ur, rng)
            instances.append(inst)
            _connect_hub(g, hub, block, right, inst, rng)
    d = DskGraph(n, q, hubs, blocks, right, isolated, g, instances)
    return Embedding(d, i, beta, S, T)


def genie_recover(emb: Embedding, forest: SpanningForest) -> int | None:
    """Read the planted hub's first forest edge into ``V_r`` back through beta."""
    hub = emb.hub
    right = set(emb.dsk.right)
    inverse = {v: x for x, v in enumerate(emb.beta)}
    for a, b in forest.edges:
        if hub in (a, b):
            other = b if a == hub else a
            if other in right and other in inverse:
                return inverse[other]
    return None


def disconnected_copies(graphs: list[ExactGraph]) -> ExactGraph:
    """Disjoint union; copy ``c`` occupies vertices ``[c * n', (c + 1) * n')``."""
    if not graphs:
        return ExactGraph(0)
    size = graphs[0].n
    if any(g.n != size for g in graphs):
        raise ValueError("all copies must have the same number of vertices")
    out = ExactGraph(size * len(graphs))
    for c, g in enumerate(graphs):
        for u, v in g.edges:
            out.insert(c * size + u, c * size + v)
    return out
