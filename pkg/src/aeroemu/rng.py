"""Counter-based uniform generator used for dataset sampling.

Every draw is a pure function of ``(seed, row, field)``: the 64-bit counter
``row * STRIDE + field`` is offset by a seed-derived key and pushed through the
SplitMix64 finaliser (Steele, Lea & Flood 2014).  The top 53 bits give a
double in [0, 1).  Because there is no hidden state, rows can be generated in
any order or on any worker and the bytes come out the same.

The algorithm is frozen: changing any constant here changes every dataset.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
STRIDE = 64  # max fields per row
_TO_UNIT = 2.0 ** -53


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def _seed_key(seed: int):
    if seed < 0:
        raise ValueError("seed must be non-negative")
    with np.errstate(over="ignore"):
        return _mix(np.uint64(seed % 2**64) + GOLDEN)


def uniform_block(seed: int, rows, n_fields: int) -> np.ndarray:
    """Uniform [0, 1) draws of shape (len(rows), n_fields)."""
    if not 0 < n_fields <= STRIDE:
        raise ValueError(f"n_fields must be in 1..{STRIDE}")
    rows = np.asarray(rows, dtype=np.uint64).reshape(-1, 1)
    fields = np.arange(n_fields, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        counter = rows * np.uint64(STRIDE) + fields + np.uint64(1)
        bits = _mix(counter * GOLDEN + _seed_key(seed))
    return (bits >> np.uint64(11)).astype(np.float64) * _TO_UNIT


class RowStream:
    """Sequential view of one row's draws; equivalent to a row of `uniform_block`."""

    def __init__(self, seed: int, row: int):
        self.seed = seed
        self.row = row
        self._pos = 0

    def uniform(self, size: int) -> np.ndarray:
        block = uniform_block(self.seed, [self.row], self._pos + size)[0]
        out = block[self._pos:]
        self._pos += size
        return out
