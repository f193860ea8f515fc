"""Deterministic RNG stream derivation.

Every Monte Carlo operation derives independent substreams from
``(master seed, operation tag, indices...)`` via ``numpy.random.SeedSequence``
spawn keys.  Estimates assembled from per-worker tallies are therefore
reproducible for a fixed (seed, worker count) regardless of execution
order, and distinct operations never share a stream.
"""

import numpy as np

# operation tags (stable across versions; recorded implicitly via config)
TAG_SAMPLE = 1
TAG_PROBE = 2
TAG_TILTED = 3
TAG_ACH_OUTER = 4
TAG_ACH_CODE = 5
TAG_BALL = 6
TAG_FIT = 7
TAG_INSTANCE = 8


def substream(seed, *key):
    """Generator for the substream identified by (seed, key...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def substream_u32(seed, *key):
    """A 31-bit integer seed for kernels with internal RNG state."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)


def worker_slices(total, workers):
    """Split ``total`` draws into per-worker contiguous counts."""
    workers = max(1, int(workers))
    base = total // workers
    counts = [base] * workers
    counts[-1] += total - base * workers
    return [c for c in counts if c > 0]
