"""The subset universal relation: hard distribution and one-way protocols.

Alice holds ``S``, Bob holds ``T`` strictly inside ``S``; from one message of
Alice, Bob must name an element of ``S \\ T``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from sketchspan.field import as_seed
from sketchspan.sketch import SketchParams, SupportFindSketch


class RegimeError(ValueError):
    """Parameters outside the regime where the distribution is defined."""


class ScheduleError(ValueError):
    """The size schedule r_i is not strictly increasing."""


class DegenerateScheduleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class UrParams:
    U: int
    delta: float
    m: int
    alpha: float
    rounds: int
    schedule: tuple[int, ...]
    c_size: float = 20.0
    c_R: float = 20.0

    @classmethod
    def create(cls, U: int, delta: float, c_size: float = 20.0, c_R: float = 20.0) -> UrParams:
        if U < 4:
            raise RegimeError(f"universe must have at least 4 elements, got {U}")
        if not 0.0 < delta < 1.0:
            raise RegimeError(f"delta must lie in (0, 1), got {delta}")
        log_inv = -math.log2(delta)
        m = math.isqrt(math.floor(U * log_inv))
        alpha = c_size / log_inv
        if alpha >= 1.0:
            raise RegimeError(f"alpha = {alpha:g} >= 1; need log2(1/delta) > {c_size:g}")
        if m > U:
            raise RegimeError(f"set size m = {m} exceeds universe {U}")
        if alpha * m <= 1.0:
            raise RegimeError(f"alpha * m = {alpha * m:g} <= 1 leaves no schedule")
        rounds = math.floor(math.log2(alpha * m) / (c_R * alpha))
        if rounds < 1:
            raise RegimeError(f"schedule length R = {rounds} < 1")
        # exact ratio of the two floats, so e.g. alpha = 2/6 stays exactly 1/3
        shrink = 1 - Fraction(c_size) / Fraction(log_inv)
        schedule = tuple(math.floor(m * (1 - shrink ** i)) for i in range(rounds))
        full = schedule + (m,)
        for i in range(rounds):
            if full[i + 1] - full[i] < 1:
                raise ScheduleError(f"schedule {list(schedule)} (then m={m}) has r_{i + 1} - r_{i} < 1")
        if rounds == 1:
            warnings.warn(f"degenerate schedule: R = 1, only |T| = 0 (U={U}, delta={delta:g})",
                          DegenerateScheduleWarning, stacklevel=2)
        return cls(U, delta, m, alpha, rounds, schedule, c_size, c_R)

    def size_index(self, size: int) -> int:
        """The ``i`` with ``r_i == size``."""
        try:
            return self.schedule.index(size)
        except ValueError:
            raise ValueError(f"{size} is not a scheduled size {list(self.schedule)}") from None

    def next_size(self, i: int) -> int:
        """``r_{i+1}``, with ``r_R = m``."""
        return self.schedule[i + 1] if i + 1 < self.rounds else self.m


@dataclass(frozen=True)
class UrInstance:
    S: frozenset[int]
    T: frozenset[int]
    i: int = -1


def sample_d_ur(p: UrParams, seed) -> UrInstance:
    """Uniform m-subset ``S``, uniform ``i``, uniform ``r_i``-subset ``T`` of ``S``."""
    rng = np.random.default_rng(seed)
    S = rng.choice(p.U, size=p.m, replace=False)
    i = int(rng.integers(p.rounds))
    T = rng.choice(S, size=p.schedule[i], replace=False)
    return UrInstance(frozenset(S.tolist()), frozenset(T.tolist()), i)


class UrProtocol:
    """A one-way protocol; ``bob`` must be a deterministic function of its inputs."""

    def alice(self, S) -> bytes:
        raise NotImplementedError

    def bob(self, message: bytes, T) -> int | None:
        raise NotImplementedError


def ur_alice(S, sketch_params: SketchParams, seed) -> bytes:
    """Alice's message: a support-finding sketch of the indicator of ``S``."""
    s = SupportFindSketch(sketch_params, seed)
    for x in sorted(S):
        s.update(x, 1)
    return s.to_bytes()


def ur_bob(message: bytes, T) -> int | None:
    """Subtract the indicator of ``T`` and ask for one support element; None on Fail."""
    s = SupportFindSketch.from_bytes(message)
    for x in sorted(T):
        s.update(x, -1)
    if s.is_zero():
        raise ValueError("T must be a strict subset of S")
    result = s.query()
    if result.failed or not result.indices:
        return None
    return result.indices[0]


class SketchProtocol(UrProtocol):
    def __init__(self, U: int, delta1: float = 0.05, delta2: float = 0.01, seed=0):
        self.params = SketchParams.create(U, 1, delta1, delta2)
        self.seed = as_seed(seed)

    def alice(self, S) -> bytes:
        return ur_alice(S, self.params, self.seed)

    def bob(self, message: bytes, T) -> int | None:
        return ur_bob(message, T)


class AlwaysFailProtocol(UrProtocol):
    def alice(self, S) -> bytes:
        return b""

    def bob(self, message: bytes, T) -> int | None:
        return None


class AlwaysWrongProtocol(UrProtocol):
    """Sends ``S`` in the clear and then deliberately answers outside ``S \\ T``."""

    def __init__(self, U: int):
        self.U = U

    def alice(self, S) -> bytes:
        return struct.pack(f"<{len(S)}I", *sorted(S))

    def bob(self, message: bytes, T) -> int | None:
        S = set(struct.unpack(f"<{len(message) // 4}I", message))
        if T:
            return min(T)
        outside = [x for x in range(self.U) if x not in S]
        return outside[0] if outside else None
