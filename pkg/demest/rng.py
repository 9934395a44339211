"""Counter-based random streams.

Every consumer derives its generator from (seed, stream keys...), so a
given block of shots or a given Monte Carlo draw always sees the same
numbers no matter how work is scheduled across threads.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derived_generator(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for the sub-stream `stream` of `seed`."""
    entropy = [int(seed) & _MASK64, *(int(k) & _MASK64 for k in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def random_bits(rng: np.random.Generator, n_bits: int) -> int:
    """Uniform integer in [0, 2^n_bits)."""
    raw = rng.bytes((n_bits + 7) // 8)
    return int.from_bytes(raw, "little") & ((1 << n_bits) - 1)
