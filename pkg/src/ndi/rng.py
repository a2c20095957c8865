"""Deterministic random streams.

Every consumer gets a ``numpy.random.Generator`` derived from a parent seed
and an integer key path, so child stream ``k`` depends only on
``(seed, k)`` and never on how many other streams were created before it.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the child stream addressed by ``key`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(int(rng))
