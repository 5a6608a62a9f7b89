"""Seeded random streams.

Every random draw comes from a Philox (counter-based) generator keyed by
``SeedSequence(entropy=seed, spawn_key=path)``. ``path`` is a tuple of
small integers naming the stream, e.g. ``(STREAM_INIT,)`` for the initial
ensemble of a run or ``(stream, repetition)`` inside the chaos sweep.
Distinct paths give statistically independent streams, and a stream's
output depends only on ``(seed, path)``, never on evaluation order.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 0


def make_rng(seed: int, *path: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
