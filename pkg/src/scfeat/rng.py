"""Portable counter-based SplitMix64 generator.

Stream ``i`` (0-based) of seed ``s`` is::

    z = (s + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    out = z ^ (z >> 31)

which is the sequence produced by the reference SplitMix64 ``next()`` when
started from state ``s``.  Uniform doubles in [0, 1) take the top 53 bits:
``(out >> 11) * 2**-53``.  Being counter based, element ``i`` can be produced
without generating the previous ones, so per-cell or per-iteration draws are
order independent.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start + count - 1`` of the stream for ``seed`` as uint64."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + idx * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Uniform float64 values in [0, 1)."""
    bits = splitmix64(seed, count, start) >> np.uint64(11)
    return bits.astype(np.float64) * (2.0 ** -53)


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed for sub-stream ``index`` (cells, iterations)."""
    return int(splitmix64((seed ^ (0xD1B54A32D192ED03 * (index + 1))) & MASK64, 1)[0])


def sample_without_replacement(seed: int, population: int, k: int) -> np.ndarray:
    """``k`` distinct indices in ``range(population)`` by partial Fisher-Yates."""
    if not 0 <= k <= population:
        raise ValueError(f"cannot draw {k} distinct items from {population}")
    pool = np.arange(population, dtype=np.int64)
    u = uniform(seed, k)
    for i in range(k):
        j = i + int(u[i] * (population - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k].copy()
