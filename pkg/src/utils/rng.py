"""
Seeded random streams

Every stochastic routine takes an explicit numpy Generator. Substreams are
derived from (master seed, stream index) through SeedSequence spawn keys, so
parallel Monte-Carlo loops and sweep cells are reproducible regardless of the
order in which they run.
"""

import numpy as np

from src.utils.errors import ConfigError


def make_rng(seed: int) -> np.random.Generator:
    """Generator for a master seed"""
    if seed is None or int(seed) < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def substream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for stream `index` under master `seed`"""
    if seed is None or int(seed) < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    key = tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
