"""Training frame curation and hybrid (shuffled key/non-key) inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .features import FeatureSequence
from .tad import TadConfig, tad_select

KEY = "key"
NONKEY = "nonkey"


class InvalidDelta(ValueError):
    pass


@dataclass(frozen=True)
class CuratedSample:
    keyframes: tuple[int, ...]
    non_keyframes: tuple[int, ...]
    delta: float
    num_frames: int

    @property
    def num_selected(self) -> int:
        return len(self.keyframes)


@dataclass(frozen=True)
class HybridSample:
    frame_ids: tuple[int, ...]
    provenance: tuple[str, ...]
    shuffle_seed: int


def selection_size(num_frames: int, delta: float) -> int:
    """``floor(delta * T)``, at least 1."""
    if not (0.0 < delta <= 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1], got {delta}")
    # guard against products like 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(delta * num_frames + 1e-9))


def curate_frames(seq: FeatureSequence, delta: float, tad_cfg: TadConfig) -> CuratedSample:
    k = selection_size(seq.num_frames, delta)
    result = tad_select(seq, replace(tad_cfg, budget=k, mode="sync"))
    keys = tuple(int(i) for i in result.indices)
    chosen = set(keys)
    rest = tuple(t for t in range(seq.num_frames) if t not in chosen)
    return CuratedSample(keyframes=keys, non_keyframes=rest, delta=float(delta), num_frames=seq.num_frames)


def build_hybrid(sample: CuratedSample, seed: int) -> HybridSample:
    """Mix ceil(T_s/2) keyframes with floor(T_s/2) non-keyframes and shuffle.

    Falls back to a shuffle of all keyframes when there are no non-keyframes.
    The result always has exactly T_s slots.
    Draws are uniform without replacement; deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    n_sel = sample.num_selected
    keys = np.asarray(sample.keyframes, dtype=np.int64)
    nonkeys = np.asarray(sample.non_keyframes, dtype=np.int64)
    if nonkeys.size == 0:
        ids = keys
        prov = [KEY] * keys.size
    else:
        # too few non-keyframes (delta > 2/3): top up with keyframes to keep T_s slots
        n_non = min(n_sel // 2, nonkeys.size)
        n_key = n_sel - n_non
        pick_k = rng.choice(keys, size=n_key, replace=False)
        pick_n = rng.choice(nonkeys, size=n_non, replace=False)
        ids = np.concatenate([pick_k, pick_n])
        prov = [KEY] * n_key + [NONKEY] * n_non
    perm = rng.permutation(ids.size)
    return HybridSample(
        frame_ids=tuple(int(ids[p]) for p in perm),
        provenance=tuple(prov[p] for p in perm),
        shuffle_seed=int(seed),
    )
