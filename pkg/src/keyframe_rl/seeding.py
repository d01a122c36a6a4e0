"""Splittable seeding: every random stream is keyed by (master seed, stream path)."""

from __future__ import annotations

import numpy as np


def _sequence(seed: int, stream: tuple[int, ...]) -> np.random.SeedSequence:
    # spawn_key keeps paths of different length apart; a plain entropy list
    # would treat [s] and [s, 0] as the same number
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic 63-bit sub-seed for ``(seed, *stream)``."""
    state = _sequence(seed, stream).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(_sequence(seed, stream))
