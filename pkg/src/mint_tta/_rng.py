"""Counter-based random streams, splittable by (seed, path) keys."""

import numpy as np


def philox_stream(seed: int, *path: int) -> np.random.Generator:
    """Independent Philox stream derived from a base seed and an index path.

    Streams with distinct (seed, path) keys are statistically independent,
    so shards can be sampled in any order (or in parallel) and still produce
    bit-identical results for a fixed seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
