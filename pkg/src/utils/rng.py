# src/utils/rng.py
"""
Deterministic random streams for weight randomization and synthetic data.

Everything random in the pipeline goes through this module so a run is
bit-reproducible from its seed, on any platform:

  - SplitMix64 state transition (state += GOLDEN, then the output mix)
  - Box-Muller Gaussians, exactly two u64 draws per deviate
  - vectorised draws that consume the stream exactly like n scalar draws
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# 2**-53, the spacing of doubles in [0.5, 1)
UNIT = 1.0 / (1 << 53)

# Purpose keys for derive_stream, one per consumer
PURPOSE_BASE_WEIGHTS = 1
PURPOSE_RANDOMIZE = 2
PURPOSE_SYNTH = 3
PURPOSE_TRAIN_SAMPLES = 4


def _mix(z: int) -> int:
    """SplitMix64 output function on a 64-bit state value."""
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


@dataclass
class RngStream:
    """
    Single-owner SplitMix64 stream.

    `state` is the raw 64-bit counter; every draw advances it by GOLDEN.
    """

    state: int = 0

    def __post_init__(self) -> None:
        self.state &= MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def next_uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * UNIT

    def next_gaussian(self, mean: float = 0.0, std: float = 1.0) -> float:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        u1 = (self.next_u64() >> 11) * UNIT
        u2 = (self.next_u64() >> 11) * UNIT
        if u1 == 0.0:
            u1 = UNIT
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def next_below(self, n: int) -> int:
        """Integer in [0, n) from one uniform draw."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        return min(int(self.next_uniform() * n), n - 1)

    # ---------- vectorised draws ----------

    def u64_array(self, n: int) -> np.ndarray:
        """
        n consecutive u64 outputs as a uint64 array.

        SplitMix64 state is an additive counter, so draw i uses
        state0 + (i + 1) * GOLDEN; the stream ends where n scalar
        next_u64() calls would have left it.
        """
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        if n == 0:
            return np.zeros(0, dtype=np.uint64)

        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))

        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * UNIT

    def gaussian_array(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """n Box-Muller deviates; draws (2i, 2i+1) feed deviate i, as in next_gaussian."""
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        u = (self.u64_array(2 * n) >> np.uint64(11)).astype(np.float64) * UNIT
        u1 = u[0::2]
        u2 = u[1::2]
        u1[u1 == 0.0] = UNIT
        return mean + std * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def next_u64(stream: RngStream) -> int:
    return stream.next_u64()


def next_gaussian(stream: RngStream, mean: float = 0.0, std: float = 1.0) -> float:
    return stream.next_gaussian(mean, std)


def derive_stream(seed: int, *keys: int) -> RngStream:
    """
    Independent stream for a (seed, key, ...) tuple.

    Each key is folded in with one SplitMix64 step:
        h <- mix((h ^ key) + GOLDEN)
    so (seed, k, purpose) tuples give unrelated streams.
    """
    h = seed & MASK64
    for key in keys:
        h = _mix(((h ^ (key & MASK64)) + GOLDEN) & MASK64)
    return RngStream(h)


def sample_indices(
    population: int,
    sample_size: int,
    stream: RngStream,
) -> np.ndarray:
    """
    Sample `sample_size` distinct indices from range(population), sorted.

    Partial Fisher-Yates driven by the stream, so the selection is
    reproducible from the seed.

    Raises:
        ValueError if the population is smaller than the sample.
    """
    if population < sample_size:
        raise ValueError(
            f"Not enough items to sample: have {population}, need {sample_size}"
        )

    pool = np.arange(population)
    for i in range(sample_size):
        j = i + stream.next_below(population - i)
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:sample_size])
