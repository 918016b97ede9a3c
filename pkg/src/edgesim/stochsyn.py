"""Stochastic synapse machinery: a 16-bit LFSR and drop-connect masks.

The pseudo-random source is a Fibonacci LFSR over the maximal-length
polynomial x^16 + x^14 + x^13 + x^11 + 1 (period 65535). Masks consume 16
output bits per weight: the bits, read MSB-first as a fraction of 2^16,
drop the weight when they fall below the drop probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LFSR_BITS = 16
LFSR_PERIOD = (1 << LFSR_BITS) - 1
# taps for x^16 + x^14 + x^13 + x^11 + 1 in shift-right form: state bits 0, 2, 3, 5
_TAP_MASK = 0b0000_0000_0010_1101

BITS_PER_SAMPLE = 16


@dataclass(frozen=True)
class Lfsr:
    """Immutable LFSR state; stepping returns the output bit and a new Lfsr."""

    state: int = 0xACE1

    def __post_init__(self):
        if not 0 < self.state <= 0xFFFF:
            raise ValueError(f"LFSR state must be a nonzero 16-bit value, got {self.state:#x}")

    def step(self) -> tuple[int, "Lfsr"]:
        bit = self.state & 1
        feedback = bin(self.state & _TAP_MASK).count("1") & 1
        return bit, Lfsr((self.state >> 1) | (feedback << 15))

    def bits(self, n: int) -> tuple[np.ndarray, "Lfsr"]:
        """Emit the next n output bits as a uint8 array (cycle-cache fast path)."""
        if n < 0:
            raise ValueError("bit count must be non-negative")
        cycle_bits, index_of = _cycle_tables()
        start = index_of[self.state]
        idx = (start + np.arange(n)) % LFSR_PERIOD
        out = cycle_bits[idx]
        return out, Lfsr(int(_cycle_states()[(start + n) % LFSR_PERIOD]))

    def uniforms(self, n: int) -> tuple[np.ndarray, "Lfsr"]:
        """Draw n floats in [0, 1): 16 bits each, MSB-first, over 2^16."""
        raw, nxt = self.bits(n * BITS_PER_SAMPLE)
        words = raw.reshape(n, BITS_PER_SAMPLE) @ _BIT_WEIGHTS
        return words / float(1 << BITS_PER_SAMPLE), nxt

    def uniform(self) -> tuple[float, "Lfsr"]:
        u, nxt = self.uniforms(1)
        return float(u[0]), nxt

    def randint(self, n: int) -> tuple[int, "Lfsr"]:
        """Draw an integer in [0, n) from one 16-bit sample (n must divide 2^16
        for exact uniformity; callers here use powers of two)."""
        raw, nxt = self.bits(BITS_PER_SAMPLE)
        word = int(raw @ _BIT_WEIGHTS)
        return word % n, nxt

    def randints(self, count: int, n: int) -> tuple[np.ndarray, "Lfsr"]:
        """Batched randint; consumes the same bit stream as repeated calls."""
        raw, nxt = self.bits(count * BITS_PER_SAMPLE)
        words = raw.reshape(count, BITS_PER_SAMPLE) @ _BIT_WEIGHTS
        return words % n, nxt


def lfsr_next(lfsr: Lfsr) -> tuple[int, Lfsr]:
    """Single Fibonacci step: output bit 0, shift right, feedback into bit 15."""
    return lfsr.step()


_BIT_WEIGHTS = (1 << np.arange(BITS_PER_SAMPLE - 1, -1, -1)).astype(np.int64)

# Full output cycle, computed once. Walking the cycle is bit-identical to
# stepping: the output stream from state s is the cycle starting at s's index.
_cycle_cache = None


def _build_cycle():
    states = np.empty(LFSR_PERIOD, dtype=np.uint16)
    bits = np.empty(LFSR_PERIOD, dtype=np.uint8)
    index_of = np.zeros(1 << LFSR_BITS, dtype=np.int32)
    s = 1
    for i in range(LFSR_PERIOD):
        states[i] = s
        bits[i] = s & 1
        index_of[s] = i
        feedback = bin(s & _TAP_MASK).count("1") & 1
        s = (s >> 1) | (feedback << 15)
    if s != 1:
        raise AssertionError("LFSR tap mask is not maximal length")
    return states, bits, index_of


def _cycle_tables():
    global _cycle_cache
    if _cycle_cache is None:
        _cycle_cache = _build_cycle()
    _states, bits, index_of = _cycle_cache
    return bits, index_of


def _cycle_states():
    _cycle_tables()
    return _cycle_cache[0]


@dataclass(frozen=True)
class DropMask:
    """Boolean keep-matrix for one weight matrix plus the drop probability."""

    keep: np.ndarray
    p: float

    @property
    def shape(self):
        return self.keep.shape

    def drop_count(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))


def drop_mask(shape: tuple[int, int], p: float, lfsr: Lfsr) -> tuple[DropMask, Lfsr]:
    """Generate a drop-connect mask: entry (i, j) is dropped when its 16-bit
    sample is below p. Row-major draw order, 16 LFSR steps per entry."""
    if not 0 <= p < 1:
        raise ValueError(f"drop probability must be in [0, 1), got {p}")
    rows, cols = shape
    n = rows * cols
    u, nxt = lfsr.uniforms(n)
    keep = (u >= p).reshape(rows, cols)
    return DropMask(keep=keep, p=p), nxt


def masked_weights(weights: np.ndarray, mask: DropMask) -> np.ndarray:
    """Zero the dropped entries, leave kept entries untouched."""
    weights = np.asarray(weights)
    if weights.shape != mask.keep.shape:
        raise ValueError(f"weight shape {weights.shape} != mask shape {mask.keep.shape}")
    return np.where(mask.keep, weights, np.zeros((), dtype=weights.dtype))
