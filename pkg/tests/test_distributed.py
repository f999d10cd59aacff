from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from sketchspan.agm import AgmParams, agm_init, edge_index
from sketchspan.distributed import (Message, VertexView, read_edge_list, referee_bank, referee_decode,
                                    simulate, vertex_message, vertex_views, write_sim_csv)
from sketchspan.field import as_seed
from sketchspan.graph import ExactGraph
from sketchspan.sketch import SketchError


def random_graph(n, m, rng) -> ExactGraph:
    g = ExactGraph(n)
    while len(g.edges) < m:
        u, v = rng.choice(n, size=2, replace=False).tolist()
        if not g.has_edge(u, v):
            g.insert(u, v)
    return g


def centralized(g: ExactGraph, delta: float, seed):
    bank = agm_init(AgmParams.create(g.n, delta), seed)
    for u, v in g.edge_list():
        bank.update(u, v, 1)
    return bank


def test_isolated_vertex_message_is_zero():
    p = AgmParams.create(8, 0.1)
    m = vertex_message(VertexView(3, (), 8, as_seed(0)), p, 0)
    assert not m.cells.any()
    assert m.bit_length == p.rounds * p.sketch_params.size_bits == 8 * len(m.payload)


def test_single_neighbour_decodes_signed_edge():
    p = AgmParams.create(8, 0.1)
    m0 = vertex_message(VertexView(0, (1,), 8, as_seed(0)), p, 0)
    m1 = vertex_message(VertexView(1, (0,), 8, as_seed(0)), p, 0)
    bank = referee_bank([m0, m1] + [vertex_message(VertexView(u, (), 8, as_seed(0)), p, 0) for u in range(2, 8)],
                        p, 0)
    idx = edge_index(0, 1, 8)
    for r in range(p.rounds):
        assert bank.sketch(0, r).decode_cell(0, 0) == (idx, 1)
        assert bank.sketch(1, r).decode_cell(0, 0) == (idx, -1)


def test_bad_neighbour_rejected():
    p = AgmParams.create(8, 0.1)
    with pytest.raises(ValueError):
        vertex_message(VertexView(0, (8,), 8, as_seed(0)), p, 0)
    with pytest.raises(ValueError):
        vertex_message(VertexView(0, (0,), 8, as_seed(0)), p, 0)


def test_message_size_independent_of_degree():
    g = ExactGraph(6, [(0, 1), (0, 2), (0, 3), (4, 5)])
    p = AgmParams.create(6, 0.05)
    bits = {vertex_message(v, p, 1).bit_length for v in vertex_views(g, 1)}
    assert len(bits) == 1


def test_star_and_empty():
    star = ExactGraph(4, [(0, 1), (0, 2), (0, 3)])
    for seed in range(5):
        rep = simulate(star, 0.1, seed)
        assert sorted(rep.forest.edges) == [(0, 1), (0, 2), (0, 3)]
        assert rep.valid
    assert simulate(ExactGraph(6), 0.05, 0).forest.edges == []


def test_referee_equals_centralized():
    rng = np.random.default_rng(0)
    for seed in range(10):
        g = random_graph(24, int(rng.integers(0, 40)), rng)
        p = AgmParams.create(24, 0.05)
        msgs = [vertex_message(v, p, seed) for v in vertex_views(g, seed)]
        bank = centralized(g, 0.05, seed)
        assert referee_bank(msgs, p, seed) == bank
        assert referee_decode(msgs, p, seed) == bank.query()
        assert b"".join(m.payload for m in msgs) == bank.to_bytes()


def test_payload_round_trip_through_referee():
    g = ExactGraph(8, [(0, 1), (2, 5), (5, 7)])
    p = AgmParams.create(8, 0.05)
    msgs = [Message.from_payload(v.vertex, vertex_message(v, p, 4).payload, p, 4) for v in vertex_views(g, 4)]
    assert referee_decode(msgs, p, 4) == centralized(g, 0.05, 4).query()
    with pytest.raises(SketchError):
        Message.from_payload(0, msgs[0].payload[:-1], p, 4)
    with pytest.raises(SketchError):
        referee_decode(msgs[:-1], p, 4)


def test_message_locality():
    p = AgmParams.create(10, 0.05)
    g1 = ExactGraph(10, [(0, 1), (0, 2), (3, 4)])
    g2 = ExactGraph(10, [(0, 1), (0, 2), (5, 6), (7, 8), (1, 9)])
    m1 = vertex_message(vertex_views(g1, 9)[0], p, 9)
    m2 = vertex_message(vertex_views(g2, 9)[0], p, 9)
    assert m1.payload == m2.payload


def test_simulate_failure_rate_n64():
    rng = np.random.default_rng(1)
    trials, delta = 200, 0.05
    bad = 0
    for seed in range(trials):
        rep = simulate(random_graph(64, int(rng.integers(20, 120)), rng), delta, seed)
        assert rep.avg_message_bits == rep.max_message_bits
        bad += not rep.valid
    assert bad / trials <= 2 * delta


def test_accounting():
    g = ExactGraph(12, [(0, 1), (1, 2), (5, 6)])
    rep = simulate(g, 0.05, 2)
    bank = centralized(g, 0.05, 2)
    assert rep.avg_message_bits * g.n == bank.total_size_bits == 8 * len(bank.to_bytes())


def test_message_bits_track_a_single_fitted_constant():
    ns = [2 ** e for e in range(6, 12)]
    ratios = []
    for n in ns:
        delta = 1 / n
        rep = simulate(ExactGraph(n), delta, 0)
        ratios.append(rep.avg_message_bits / (math.log2(n / delta) * math.log2(n) ** 2))
    c = math.sqrt(max(ratios) * min(ratios))  # geometric midpoint
    assert all(c / 4 <= r <= 4 * c for r in ratios)


def test_read_edge_list_and_csv(tmp_path):
    g = read_edge_list("# demo\nn 4\n0 1\n2 3  # comment\n")
    assert g.n == 4 and g.edge_list() == [(0, 1), (2, 3)]
    for bad in ["0 1\n", "n 4\n0\n", "n 4\n0 9\n", ""]:
        with pytest.raises(ValueError):
            read_edge_list(bad)
    path = tmp_path / "sim.csv"
    write_sim_csv(path, [(7, simulate(g, 0.1, 7))])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["n", "delta", "seed", "valid", "avg_bits", "max_bits"]
    assert rows[1][:4] == ["4", "0.1", "7", "true"]
