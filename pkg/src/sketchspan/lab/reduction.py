"""n-fold subset universal relation answered by one dynamic spanning-forest sketch.

Left vertex ``x`` stands for element ``x``, right vertex ``n + i`` for
instance ``i``. Alice links every instance to its set, ships the bank; Bob
unlinks the ``T_i`` and reads each right vertex's forest neighbour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from sketchspan.agm import AgmParams, SpanningForest, VertexSketchBank
from sketchspan.graph import ExactGraph, verify_forest
from sketchspan.lab.ur import UrInstance


class ReductionError(RuntimeError):
    """The serialized bank did not reload to the same state."""


@dataclass
class NfoldResult:
    answers: list[int | None]
    forest: SpanningForest
    valid: bool
    all_correct: bool
    communicated_bytes: int
    total_size_bits: int


def nfold_reduction(instances: list[UrInstance], delta: float, seed) -> NfoldResult:
    n = len(instances)
    for i, inst in enumerate(instances):
        if not inst.T < inst.S or not all(0 <= x < n for x in inst.S):
            raise ValueError(f"instance {i}: need T strictly inside S inside [0, {n})")
    params = AgmParams.create(2 * n, delta)

    alice = VertexSketchBank(params, seed)
    for i, inst in enumerate(instances):
        for x in sorted(inst.S):
            alice.update(x, n + i, +1)
    wire = alice.to_bytes()
    bob = VertexSketchBank.from_bytes(wire, params, seed)
    if bob != alice:
        raise ReductionError("bank changed across serialization")

    residual = ExactGraph(2 * n)
    for i, inst in enumerate(instances):
        for x in sorted(inst.T):
            bob.update(x, n + i, -1)
        for x in sorted(inst.S - inst.T):
            residual.insert(x, n + i)
    forest = bob.query()

    answers: list[int | None] = [None] * n
    for a, b in forest.edges:
        # edges run left (< n) to right (>= n); keep the first per instance
        if a < n <= b and answers[b - n] is None:
            answers[b - n] = a
    all_correct = all(ans is not None and ans in inst.S - inst.T
                      for ans, inst in zip(answers, instances))
    total = alice.total_size_bits
    return NfoldResult(answers, forest, verify_forest(forest, residual).is_valid, all_correct,
                       math.ceil(total / 8), total)
