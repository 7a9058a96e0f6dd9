"""Seed plumbing: one global seed fans out into per-component streams."""

from __future__ import annotations

import numpy as np


def seed_sequence(seed) -> np.random.SeedSequence:
    """Normalize ints, None or an existing SeedSequence into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass a seed or SeedSequence here, not a Generator")
    return np.random.SeedSequence(seed)
