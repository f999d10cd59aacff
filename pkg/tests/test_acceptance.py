"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expected values come from independent oracles: direct cut-vector sketches
built through the single-sketch update path, exact graph connectivity, and
the instance generators' own ground truth.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from sketchspan.agm import AgmParams, VertexSketchBank, agm_init, agm_query, edge_index
from sketchspan.cli import space_ratio
from sketchspan.distributed import referee_bank, referee_decode, simulate, vertex_message, vertex_views
from sketchspan.field import P, sum_mod
from sketchspan.graph import ExactGraph, apply_stream, random_dynamic_stream
from sketchspan.lab.codec import decode, encode
from sketchspan.lab.dsk import dsk_violations, embed_ur_in_dsk, genie_recover, sample_d_sk
from sketchspan.lab.reduction import nfold_reduction
from sketchspan.lab.ur import AlwaysFailProtocol, AlwaysWrongProtocol, SketchProtocol, UrParams, sample_d_ur
from sketchspan.sketch import SketchParams, SupportFindSketch


def report(capsys, number: int, name: str, ok: bool, detail: str, started: float) -> None:
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail}; {time.time() - started:.1f}s)")


def random_vector(rng, N: int, support: int) -> dict[int, int]:
    idx = rng.choice(N, size=min(support, N), replace=False).tolist()
    vals = rng.choice([-(2 ** 40), -3, -1, 1, 2, 5, 2 ** 40, P - 1], size=len(idx)).tolist()
    return {int(i): int(v) for i, v in zip(idx, vals)}


def test_1_exact_linearity(capsys):
    started = time.time()
    rng = np.random.default_rng(101)
    bad = 0
    for case in range(1000):
        N = int(rng.integers(2, 2 ** 12 + 1))
        k = int(rng.choice([1, 2, 4]))
        params = SketchParams.create(N, k, 0.05, 0.01)
        seed = int(rng.integers(2 ** 63))
        z1 = random_vector(rng, N, int(rng.integers(0, 12)))
        z2 = random_vector(rng, N, int(rng.integers(0, 12)))
        if z1 and case % 3 == 0:  # force cancellations on shared coordinates
            z2.update({i: -v for i, v in list(z1.items())[:3]})
        total = dict(z1)
        for i, v in z2.items():
            total[i] = total.get(i, 0) + v
        lhs = SupportFindSketch.from_vector(params, seed, z1) + SupportFindSketch.from_vector(params, seed, z2)
        rhs = SupportFindSketch.from_vector(params, seed, total)
        bad += lhs.to_bytes() != rhs.to_bytes()
    report(capsys, 1, "exact linearity", bad == 0, f"{1000 - bad}/1000 byte-identical", started)
    assert bad == 0


def random_sparse_graph(rng, n: int) -> list[tuple[int, int]]:
    pairs = list(itertools.combinations(range(n), 2))
    keep = rng.random(len(pairs)) < min(1.0, 3.0 / (n - 1))
    return [p for p, k in zip(pairs, keep) if k]


def build_bank(n: int, edges, seed: int, rng) -> VertexSketchBank:
    """Insert every edge (plus decoys that are later deleted) in random order."""
    bank = agm_init(AgmParams.create(n, 0.05), seed)
    present = set(edges)
    decoys = [p for p in itertools.combinations(range(n), 2) if p not in present]
    decoys = [decoys[i] for i in rng.permutation(len(decoys))[:5]]
    for i in rng.permutation(len(edges)):
        u, v = edges[i]
        bank.update(v, u, 1) if rng.random() < 0.5 else bank.update(u, v, 1)
    for u, v in decoys:
        bank.update(u, v, 1)
    for u, v in decoys:
        bank.update(v, u, -1)
    return bank


def unit_cells(bank: VertexSketchBank, index: int) -> np.ndarray:
    """Round-major cells of the indicator vector of ``index``, through the single-sketch path."""
    return np.stack([SupportFindSketch(bank.sketch_params, s).update(index, 1).cells for s in bank.round_seeds])


def cut_coefficient(a: int, b: int, inside) -> int:
    """Entry of the cut vector for edge ``a < b``: +1 if only ``a`` is inside, -1 if only ``b`` is."""
    return int(a in inside) - int(b in inside)


def subset_sums(select: np.ndarray, rows: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Exact ``select @ rows mod P`` for a 0/1 ``select``, via 16-bit limbs and float matmul.

    Pairs of limb products are recombined into 32-bit halves below 2**53, so
    the float arithmetic is exact.
    """
    limbs = [((rows >> np.uint64(16 * i)) & np.uint64(0xFFFF)).astype(np.float64) for i in range(4)]
    out = np.empty((len(select), rows.shape[1]), dtype=np.uint64)
    for start in range(0, len(select), chunk):
        sel = select[start:start + chunk].astype(np.float64)
        lo, hi = ((sel @ limbs[i] + (sel @ limbs[i + 1]) * 65536.0).astype(np.uint64) for i in (0, 2))
        # hi * 2**32 = (hi >> 29) * 2**61 + low bits, and 2**61 = 1 mod P; the total stays below 2**62
        total = (hi >> np.uint64(29)) + ((hi & np.uint64((1 << 29) - 1)) << np.uint64(32)) + lo
        total = (total & np.uint64(P)) + (total >> np.uint64(61))
        out[start:start + chunk] = np.where(total >= np.uint64(P), total - np.uint64(P), total)
    return out


def test_2_cut_vector_cancellation(capsys):
    started = time.time()
    rng = np.random.default_rng(202)
    checked = mismatches = 0
    for _ in range(200):
        n = int(rng.integers(5, 33))
        edges = random_sparse_graph(rng, n)
        bank = build_bank(n, edges, int(rng.integers(2 ** 63)), rng)
        vertex = np.stack([bank.vertex_cells(u) for u in range(n)]).reshape(n, -1)
        if n <= 12:
            masks = (np.arange(1, 2 ** n)[:, None] >> np.arange(n)) & 1  # every nonempty subset
        else:
            masks = (rng.random((1000, n)) < 0.5).astype(np.int64)
            masks[~masks.any(axis=1), 0] = 1
        summed = subset_sums(masks, vertex)
        for row in range(3):  # the batched sum agrees with a plain modular sum
            mismatches += not np.array_equal(summed[row], sum_mod(vertex[masks[row] == 1]))
        if edges:
            units = np.stack([unit_cells(bank, edge_index(a, b, n)) for a, b in edges]).reshape(len(edges), -1)
            a, b = np.array(edges).T
            coeff = masks[:, a] - masks[:, b]  # cut-vector entries per subset and edge
            select = np.hstack([coeff == 1, coeff == -1])
            direct = subset_sums(select, np.vstack([units, (np.uint64(P) - units) % np.uint64(P)]))
        else:
            direct = np.zeros_like(summed)
        checked += len(masks)
        mismatches += int((summed != direct).any(axis=1).sum())
        # the public round_sum agrees with the direct sketch on a spot-check subset
        inside = set(range(0, n, 2))
        r = int(rng.integers(bank.params.rounds))
        direct_sketch = SupportFindSketch(bank.sketch_params, bank.round_seeds[r])
        for u, v in edges:
            if c := cut_coefficient(u, v, inside):
                direct_sketch.update(edge_index(u, v, n), c)
        mismatches += bank.round_sum(inside, r) != direct_sketch
    report(capsys, 2, "cut-vector cancellation", mismatches == 0,
           f"{checked} subsets over 200 graphs, {mismatches} mismatches", started)
    assert mismatches == 0


def test_3_dynamic_forest_failure_rate(capsys):
    started = time.time()
    n, delta, runs = 256, 0.05, 500
    failures = 0
    for run in range(runs):
        rng = np.random.default_rng([303, run])
        bank = agm_init(AgmParams.create(n, delta), int(rng.integers(2 ** 63)))
        [(_, rep)] = apply_stream(bank, ExactGraph(n), random_dynamic_stream(n, rng))
        failures += not rep.is_valid
    rate = failures / runs
    report(capsys, 3, "dynamic forest failure rate", rate <= 2 * delta, f"{failures}/{runs} = {rate:.3f} <= 0.10",
           started)
    assert rate <= 2 * delta


def test_4_space_shape(capsys):
    started = time.time()
    ratios = []
    for n in (2 ** 8, 2 ** 9, 2 ** 10, 2 ** 11):
        bank = VertexSketchBank(AgmParams.create(n, 1 / n), 0)
        measured = 8 * len(bank.vertex_bytes(0)) * n  # every vertex serializes to the same length
        assert measured == bank.total_size_bits
        ratios.append(space_ratio(measured, n, 1 / n))
    spread = max(ratios) / min(ratios)
    report(capsys, 4, "space shape", spread <= 4,
           f"ratios {', '.join(f'{r:.0f}' for r in ratios)}; spread {spread:.2f} <= 4", started)
    assert spread <= 4


def test_5_distributed_fidelity(capsys):
    started = time.time()
    rng = np.random.default_rng(505)
    bad = 0
    for pair in range(100):
        n = int(rng.integers(5, 65))
        p = float(rng.choice([0.02, 0.05, 0.1, 0.3]))
        g = ExactGraph(n, [e for e in itertools.combinations(range(n), 2) if rng.random() < p])
        seed = int(rng.integers(2 ** 63))
        params = AgmParams.create(n, 0.05)
        central = agm_init(params, seed)
        for u, v in g.edges:
            central.update(u, v, 1)
        messages = [vertex_message(view, params, seed) for view in vertex_views(g, seed)]
        assert referee_bank(messages, params, seed).to_bytes() == central.to_bytes()
        same = referee_decode(messages, params, seed) == agm_query(central)
        avg = sum(m.bit_length for m in messages) / n
        bad += not (same and math.isclose(avg * n, central.total_size_bits, rel_tol=0, abs_tol=1e-6))
    report(capsys, 5, "distributed fidelity", bad == 0, f"{100 - bad}/100 identical with matching bit totals",
           started)
    assert bad == 0


def test_6_nfold_reduction(capsys):
    started = time.time()
    p = UrParams.create(32, 2.0 ** -8, 2, 2)
    trials = 200
    correct = implication_broken = 0
    for trial in range(trials):
        rng = np.random.default_rng([606, trial])
        res = nfold_reduction([sample_d_ur(p, rng) for _ in range(32)], 0.05, int(rng.integers(2 ** 63)))
        correct += res.all_correct
        implication_broken += res.valid and not res.all_correct
    rate = correct / trials
    ok = rate >= 0.90 and implication_broken == 0
    report(capsys, 6, "n-fold reduction", ok,
           f"all-correct {correct}/{trials} = {rate:.3f} >= 0.90; valid=>correct broken {implication_broken}", started)
    assert rate >= 0.90 and implication_broken == 0


def test_7_codec_round_trips(capsys):
    started = time.time()
    p = UrParams.create(256, 2.0 ** -16, 2, 2)
    protocols = {"fail": AlwaysFailProtocol(), "wrong": AlwaysWrongProtocol(256), "sketch": SketchProtocol(256, seed=7)}
    counts = {}
    for name, proto in protocols.items():
        good = 0
        for run in range(500):
            S = sample_d_ur(p, [707, run]).S
            good += decode(encode(S, p, proto, 77, [708, run]), p, proto, 77) == S
        counts[name] = good
    ok = all(c == 500 for c in counts.values())
    report(capsys, 7, "codec round trips", ok, ", ".join(f"{k} {v}/500" for k, v in counts.items()), started)
    assert ok


def test_8_dsk_structure(capsys):
    started = time.time()
    ur = UrParams.create(4, 2.0 ** -4, 2, 1)
    flagged = independent = 0
    for seed in range(1000):
        d = sample_d_sk(4 ** 5, ur, [808, seed])
        flagged += bool(dsk_violations(d))
        hub_of = {h: j for j, h in enumerate(d.hubs)}
        block_of = {x: j for j, b in enumerate(d.blocks) for x in b}
        right = set(d.right)
        for u, v in d.graph.edges:
            hub, other = (u, v) if u in hub_of else (v, u)
            # edge types: hub to V_r, or hub to its own block; nothing else
            allowed = hub in hub_of and (other in right or block_of.get(other) == hub_of[hub])
            independent += not allowed
    ok = flagged == 0 and independent == 0
    report(capsys, 8, "D_sk structure", ok, f"1000 samples, {flagged} flagged, {independent} bad edges", started)
    assert ok


def test_9_embedding_soundness(capsys):
    started = time.time()
    q = 8
    ur = UrParams.create(q, 2.0 ** -6, 2, 1)
    valid = wrong = 0
    for seed in range(200):
        inst = sample_d_ur(ur, [909, seed])
        emb = embed_ur_in_dsk(inst.S, inst.T, q ** 5, ur, [910, seed])
        rep = simulate(emb.dsk.graph, 0.05, seed)
        if rep.valid:
            valid += 1
            wrong += genie_recover(emb, rep.forest) not in inst.S - inst.T
    ok = wrong == 0 and valid > 0
    report(capsys, 9, "embedding soundness", ok, f"{valid}/200 valid forests, {wrong} wrong recoveries", started)
    assert ok


def test_10_one_sparse_determinism(capsys):
    started = time.time()
    N = 64
    params = SketchParams.create(N, 1, 0.05, 0.01)
    values = (1, -1, 2, -7, 2 ** 40, -(2 ** 40), P - 2)
    total = bad = 0
    for seed in range(50):
        for index in range(N):
            for value in values:
                result = SupportFindSketch(params, seed).update(index, value).query()
                total += 1
                bad += result.failed or result.indices != (index,)
    report(capsys, 10, "one-sparse determinism", bad == 0, f"{total - bad}/{total} exact", started)
    assert bad == 0
