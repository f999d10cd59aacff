from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchspan.field import (P, as_seed, derive_seed, mul_mod, pack61, packed_bytes, pow_mod, segment_sum_mod,
                              sum_mod, to_signed, trailing_zeros, unpack61)

residues = st.integers(min_value=0, max_value=P - 1)


def test_as_seed_normalises_ints_and_checks_bytes():
    assert as_seed(1) == b"\x01" + bytes(31)
    assert as_seed(b"\x07" * 32) == b"\x07" * 32
    with pytest.raises(ValueError):
        as_seed(b"short")
    with pytest.raises(ValueError):
        as_seed(-1)


def test_derive_seed_is_deterministic_and_label_sensitive():
    s = as_seed(5)
    assert derive_seed(s, "round:0") == derive_seed(s, "round:0")
    assert derive_seed(s, "round:0") != derive_seed(s, "round:1")
    assert len(derive_seed(s, "x")) == 32


@given(st.lists(st.integers(min_value=0, max_value=2 ** 64 - 1), min_size=1, max_size=50))
def test_trailing_zeros_matches_python(values):
    arr = np.array(values, dtype=np.uint64)
    expected = [64 if v == 0 else (v & -v).bit_length() - 1 for v in values]
    assert trailing_zeros(arr).tolist() == expected


@given(st.lists(residues, min_size=1, max_size=200))
def test_sum_mod_matches_big_int(values):
    assert int(sum_mod(np.array(values, dtype=np.uint64))) == sum(values) % P


@settings(max_examples=50)
@given(st.lists(st.tuples(residues, st.integers(0, 4)), min_size=1, max_size=60))
def test_segment_sum_mod_matches_big_int(rows):
    x = np.array([[v, (v * 3) % P] for v, _ in rows], dtype=np.uint64)
    labels = np.array([g for _, g in rows], dtype=np.int64)
    got = segment_sum_mod(x, labels, 6)
    for g in range(6):
        members = [v for v, lab in rows if lab == g]
        assert int(got[g, 0]) == sum(members) % P
        assert int(got[g, 1]) == sum(3 * v for v in members) % P


@given(st.lists(residues, min_size=1, max_size=40))
def test_pack61_round_trip_and_length(values):
    arr = np.array(values, dtype=np.uint64)
    data = pack61(arr)
    assert len(data) == packed_bytes(len(values))
    assert unpack61(data, len(values)).tolist() == values


def test_unpack61_rejects_bad_input():
    data = bytearray(pack61(np.array([1, 2, 3], dtype=np.uint64)))
    with pytest.raises(ValueError):
        unpack61(bytes(data), 4)
    data[-1] |= 0x80  # a padding bit
    with pytest.raises(ValueError):
        unpack61(bytes(data), 3)
    # the all-ones 61-bit field is P itself, not a residue
    with pytest.raises(ValueError):
        unpack61(bytes([0xFF] * 7 + [0x1F]), 1)


def test_to_signed():
    assert to_signed(5) == 5
    assert to_signed(P - 2) == -2
    assert to_signed(0) == 0


def test_vectorised_mul_and_pow_mod():
    rng = random.Random(5)
    a = [rng.randrange(P) for _ in range(2000)] + [0, 1, P - 1]
    b = [rng.randrange(P) for _ in range(2000)] + [P - 1, P - 1, P - 1]
    got = mul_mod(np.array(a, dtype=np.uint64), np.array(b, dtype=np.uint64)).tolist()
    assert got == [x * y % P for x, y in zip(a, b)]
    exps = [0, 1, 2, rng.randrange(1 << 40)]
    got = pow_mod(np.array(a[:5], dtype=np.uint64)[:, None], np.array(exps, dtype=np.uint64)).tolist()
    assert got == [[pow(x, e, P) for e in exps] for x in a[:5]]
