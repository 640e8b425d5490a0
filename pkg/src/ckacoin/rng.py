"""Seed handling.

Every experiment is driven by one integer seed. Trial ``i`` of an experiment
uses ``split(seed, i)``, which feeds the pair ``[seed, i]`` to numpy's
``SeedSequence``. The child stream depends only on ``(seed, i)``, so serial
and parallel runs see the same per-trial generators.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def split(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trial ``index`` of an experiment seeded with ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))
