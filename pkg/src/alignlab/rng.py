"""Seeded random number streams.

All randomness in the package flows through `make_rng`, which maps a
(seed, stream) pair to an independent numpy Generator. Identical pairs
give identical draw sequences on any platform; distinct stream ids give
statistically independent streams (SeedSequence spawn keys).
"""

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Generator for the given (seed, stream) pair."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))
    )
