import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadtwin import lfsr


def test_period_is_511():
    state, seen = lfsr.SEED, set()
    for _ in range(lfsr.PERIOD):
        seen.add(state)
        state = lfsr.step(state)
    assert state == lfsr.SEED
    assert len(seen) == 511 and 0 not in seen


def test_exhaustive_round_trip():
    counts = np.arange(lfsr.MAX_COUNT + 1)
    assert np.array_equal(lfsr.decode(lfsr.encode(counts)), counts)
    states = np.arange(1, 512)
    assert np.array_equal(lfsr.encode(lfsr.decode(states)), states)


def test_encode_zero_is_seed():
    assert lfsr.encode(0) == 0x1FF


def test_encode_follows_step():
    # the first few register states, stepped by hand from 0x1FF
    assert [lfsr.encode(n) for n in range(4)] == [0x1FF, 0x1FE, 0x1FC, 0x1F8]


def test_decode_zero_rejected():
    with pytest.raises(lfsr.LFSRError):
        lfsr.decode(0)


@pytest.mark.parametrize("bad", [-1, 511, 1000])
def test_encode_out_of_range(bad):
    with pytest.raises(lfsr.LFSRError):
        lfsr.encode(bad)


def test_decode_too_wide():
    with pytest.raises(lfsr.LFSRError):
        lfsr.decode(512)


@given(st.integers(0, lfsr.MAX_COUNT))
def test_round_trip_property(n):
    assert lfsr.decode(lfsr.encode(n)) == n
