"""9-bit maximal-length LFSR counter codec.

The counter register starts from the all-ones seed and advances once per
detected photon.  Feedback is the XOR of bits 9 and 5 (polynomial
x^9 + x^5 + 1), which cycles through all 511 non-zero states.
"""

import numpy as np

BITS = 9
MASK = (1 << BITS) - 1
PERIOD = MASK  # 511
SEED = MASK
MAX_COUNT = PERIOD - 1  # 510; one more step wraps back to the seed


class LFSRError(ValueError):
    pass


def step(state: int) -> int:
    feedback = ((state >> 8) ^ (state >> 4)) & 1
    return ((state << 1) | feedback) & MASK


def _build_tables():
    encode = np.zeros(PERIOD, dtype=np.uint16)
    decode = np.full(MASK + 1, -1, dtype=np.int32)
    state = SEED
    for n in range(PERIOD):
        encode[n] = state
        decode[state] = n
        state = step(state)
    return encode, decode


_ENCODE, _DECODE = _build_tables()


def encode(count):
    """Register state reached after ``count`` increments from the seed."""
    arr = np.asarray(count)
    if np.any(arr < 0) or np.any(arr > MAX_COUNT):
        raise LFSRError(f"count out of range 0..{MAX_COUNT}")
    out = _ENCODE[arr]
    return int(out) if out.ndim == 0 else out


def decode(state):
    """Inverse of :func:`encode`.  The all-zero lock-up state is rejected."""
    arr = np.asarray(state)
    if np.any(arr <= 0) or np.any(arr > MASK):
        raise LFSRError("invalid LFSR state (zero or wider than 9 bits)")
    out = _DECODE[arr]
    return int(out) if out.ndim == 0 else out
