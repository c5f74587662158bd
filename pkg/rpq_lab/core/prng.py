"""Seedable xoshiro256** generator with splitmix64 seeding.

The generator runs as a bank of ``lanes`` independent xoshiro256** states
advanced together with numpy uint64 arithmetic. The 4·lanes state words are
the first consecutive outputs of splitmix64 started at the seed (lane 0 takes
words 0-3, lane 1 words 4-7, ...). Each step emits one word per lane and the
stream is read step-major, lane-minor through a buffer, so a sequence of
scalar draws and one bulk draw of the same total size return identical
values. With ``lanes=1`` the stream is the canonical scalar xoshiro256**.

Derived values:
- uniform: ((x >> 11) + 0.5) * 2**-53, strictly inside (0, 1)
- normal: Box–Muller on consecutive uniform pairs (u1, u2), emitting
  r·cos(2πu2) then r·sin(2πu2); an odd trailing spare is discarded
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from rpq_lab.config import PRNG_LANES
from rpq_lab.utils import stable_hash64

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_U64 = np.uint64
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / float(1 << 53)

_FIVE, _SEVEN, _NINE, _ELEVEN = _U64(5), _U64(7), _U64(9), _U64(11)
_SEVENTEEN, _NINETEEN, _FORTY_FIVE, _FIFTY_SEVEN = _U64(17), _U64(19), _U64(45), _U64(57)


def splitmix64_sequence(seed: int, n: int) -> np.ndarray:
    """First *n* outputs of splitmix64 started at *seed* (uint64 array)."""
    with np.errstate(over="ignore"):
        z = _U64(seed & MASK64) + np.arange(1, n + 1, dtype=np.uint64) * _U64(GOLDEN_GAMMA)
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def splitmix64(seed: int) -> int:
    """First splitmix64 output for *seed*, as a Python int."""
    return int(splitmix64_sequence(seed, 1)[0])


def derive_seed(seed: int, *tags) -> int:
    """Per-purpose sub-seed: splitmix64(seed XOR hash(tags)).

    Independent of call order, so sub-streams can be created in any sequence.
    """
    return splitmix64((seed & MASK64) ^ stable_hash64(*tags))


class PrngStream:
    """Buffered lane-parallel xoshiro256** stream."""

    def __init__(self, seed: int, lanes: int = PRNG_LANES):
        if lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {lanes}")
        self.seed = seed & MASK64
        self.lanes = lanes
        words = splitmix64_sequence(self.seed, 4 * lanes).reshape(lanes, 4)
        self._s = [words[:, j].copy() for j in range(4)]
        self._t0 = np.empty(lanes, dtype=np.uint64)
        self._t1 = np.empty(lanes, dtype=np.uint64)
        # One step of leftover words; _pos == lanes means exhausted
        self._buffer = np.empty(lanes, dtype=np.uint64)
        self._pos = lanes

    @classmethod
    def for_purpose(cls, seed: int, *tags, lanes: int = PRNG_LANES) -> "PrngStream":
        return cls(derive_seed(seed, *tags), lanes=lanes)

    # ------------------------------------------------------------------
    # Raw words
    # ------------------------------------------------------------------

    def _step(self, out: np.ndarray) -> None:
        """Advance every lane once, writing one output word per lane into *out*."""
        s0, s1, s2, s3 = self._s
        t0, t1 = self._t0, self._t1
        np.multiply(s1, _FIVE, out=t0)
        np.left_shift(t0, _SEVEN, out=out)
        np.right_shift(t0, _FIFTY_SEVEN, out=t0)
        np.bitwise_or(out, t0, out=out)
        np.multiply(out, _NINE, out=out)
        np.left_shift(s1, _SEVENTEEN, out=t0)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t0
        np.left_shift(s3, _FORTY_FIVE, out=t1)
        np.right_shift(s3, _NINETEEN, out=s3)
        s3 |= t1

    def _fill(self, out: np.ndarray) -> None:
        """Fill *out* with the next ``len(out)`` words of the stream."""
        n = len(out)
        take = min(n, self.lanes - self._pos)
        out[:take] = self._buffer[self._pos:self._pos + take]
        self._pos += take
        filled = take
        full_steps = (n - filled) // self.lanes
        with np.errstate(over="ignore"):
            if full_steps:
                block = out[filled:filled + full_steps * self.lanes].reshape(full_steps, self.lanes)
                for row in block:
                    self._step(row)
                filled += full_steps * self.lanes
            if filled < n:
                self._step(self._buffer)
                self._pos = n - filled
                out[filled:] = self._buffer[:self._pos]

    def next_u64(self, size: Optional[int] = None) -> Union[int, np.ndarray]:
        """Next word (``size=None``) or the next *size* words as a uint64 array."""
        n = 1 if size is None else int(size)
        if n < 0:
            raise ValueError(f"size must be >= 0, got {n}")
        out = np.empty(n, dtype=np.uint64)
        self._fill(out)
        if size is None:
            return int(out[0])
        return out

    # ------------------------------------------------------------------
    # Distributions
    # ------------------------------------------------------------------

    def uniform(self, size: Optional[int] = None) -> Union[float, np.ndarray]:
        """53-bit uniforms strictly inside (0, 1)."""
        n = 1 if size is None else int(size)
        words = self.next_u64(n)
        np.right_shift(words, _ELEVEN, out=words)
        values = words.astype(np.float64)
        values += 0.5
        values *= _INV_2_53
        if size is None:
            return float(values[0])
        return values

    def normal(
        self, size: Optional[int] = None, mean: float = 0.0, std: float = 1.0
    ) -> Union[float, np.ndarray]:
        """Gaussian draws via Box–Muller; pairs are consumed eagerly."""
        n = 1 if size is None else int(size)
        n_pairs = -(-n // 2)
        u = self.uniform(2 * n_pairs).reshape(n_pairs, 2)
        radius = np.log(u[:, 0])
        radius *= -2.0
        np.sqrt(radius, out=radius)
        theta = u[:, 1] * _TWO_PI
        # u is reused as the (cos, sin) pair buffer
        np.cos(theta, out=u[:, 0])
        np.sin(theta, out=u[:, 1])
        u *= radius[:, None]
        values = u.reshape(-1)[:n]
        values *= std
        values += mean
        if size is None:
            return float(values[0])
        return values

    def uniform_symmetric(self, bound: float, size: int) -> np.ndarray:
        """Uniforms strictly inside (-bound, bound)."""
        return (2.0 * self.uniform(size) - 1.0) * bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher–Yates shuffle of ``range(n)``; swap index j = floor(u·(i+1))."""
        order = np.arange(n, dtype=np.int64)
        if n < 2:
            return order
        draws = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order
