"""Seeded generator plumbing. No module-level RNG state exists anywhere."""

from __future__ import annotations

import numpy as np


def as_generator(rng) -> np.random.Generator:
    """Accept an int seed, a ``SeedSequence`` or an existing ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or generator is required")
    return np.random.default_rng(rng)


def seed_of(rng) -> int | None:
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return int(rng)
    return None


def derive(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for sub-task ``path`` of a seeded run."""
    return np.random.default_rng([int(seed), *map(int, path)])
