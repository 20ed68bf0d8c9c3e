"""Seeded SplitMix64 generator.

Counter-based, so a batch of ``n`` draws is computed in one vectorized step
and the whole generator state is a single 64-bit integer that checkpoints
can store verbatim.

Constants (Steele, Lea & Flood SplitMix64):
    increment  0x9E3779B97F4A7C15
    mix mult 1 0xBF58476D1CE4E5B9  (after xor-shift 30)
    mix mult 2 0x94D049BB133111EB  (after xor-shift 27), final xor-shift 31
"""
from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        """The next ``n`` raw 64-bit outputs."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & _MASK
        return z

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` float64 draws in ``[low, high)`` from the top 53 bits."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def random(self) -> float:
        return float(self.uniform(1)[0])

    def integers(self, high: int, n: int | None = None):
        """Uniform integers in ``[0, high)``."""
        draws = np.minimum((self.uniform(1 if n is None else n) * high).astype(np.int64), high - 1)
        return int(draws[0]) if n is None else draws

    def normal(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # in (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def spawn(self) -> "SplitMix64":
        """Independent child stream seeded from this one."""
        return SplitMix64(int(self.next_u64(1)[0]))


def uniform_init(rng: SplitMix64, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    """Parameter init, uniform in ``+-sqrt(1/fan_in)``."""
    bound = np.sqrt(1.0 / fan_in)
    n = int(np.prod(shape))
    return rng.uniform(n, -bound, bound).reshape(shape).astype(dtype)
