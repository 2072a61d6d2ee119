"""Seed splitting.

Every random stream in the package derives from a master seed through
``numpy.random.SeedSequence(master, spawn_key=key)``, where ``key`` is a
tuple of non-negative integers naming the consumer, e.g.
``(STREAM_REPLICATE, op_tag, replicate_index)``.  Streams with different
keys are statistically independent; the same key always reproduces the
same stream, whatever thread or process evaluates it.
"""
import numpy as np

STREAM_TRAINS = 0
STREAM_ARROWS = 1
STREAM_REPLICATE = 2


def split_seed(master: int, *key: int) -> int:
    """Derive a 64-bit integer seed for the consumer named by ``key``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
