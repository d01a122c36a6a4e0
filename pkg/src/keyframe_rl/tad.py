"""Temporal apex distillation: keyframe selection from frame features.

Selection runs in three stages:

1. variation scoring -- cosine dissimilarity between consecutive frames,
   per patch, then aggregated over patches (max or mean);
2. inflection detection -- frames whose score is the maximum of the
   centred window of width ``W`` (leftmost index wins ties, windows are
   truncated at the sequence edges);
3. prioritized distillation -- inflection scores are boosted by ``omega``
   and the top ``K`` frames are kept, sorted chronologically.

Ties always resolve toward the smaller frame index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .features import FeatureSequence, check_indices

Aggregation = Literal["max", "mean"]
Mode = Literal["sync", "async"]
ZeroNormPolicy = Literal["dissimilar", "identical"]

COS_SNAP = 1e-12


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TadConfig:
    budget: int = 8
    window: int = 5
    omega: float = 2.0
    aggregation: Aggregation = "max"
    mode: Mode = "sync"
    zero_norm_policy: ZeroNormPolicy = "dissimilar"

    def __post_init__(self):
        if int(self.budget) != self.budget or self.budget < 1:
            raise ValueError(f"budget must be a positive integer, got {self.budget}")
        if int(self.window) != self.window or self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not np.isfinite(self.omega) or self.omega < 0:
            raise ValueError(f"omega must be a non-negative real, got {self.omega}")
        if self.aggregation not in ("max", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.mode not in ("sync", "async"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.zero_norm_policy not in ("dissimilar", "identical"):
            raise ValueError(f"unknown zero_norm_policy {self.zero_norm_policy!r}")


@dataclass(frozen=True)
class VariationProfile:
    frame_scores: np.ndarray
    patch_scores: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.frame_scores.shape[0]


@dataclass(frozen=True)
class SelectionResult:
    indices: np.ndarray
    scores: np.ndarray
    inflections: np.ndarray
    variation: VariationProfile = field(repr=False)


def patch_dissimilarity(data: np.ndarray, zero_norm_policy: ZeroNormPolicy = "dissimilar") -> np.ndarray:
    """Per-patch cosine dissimilarity ``(T, N)``; row 0 is zero."""
    data = np.asarray(data, dtype=np.float64)
    T, N, _ = data.shape
    d = np.zeros((T, N), dtype=np.float64)
    if T < 2:
        return d
    # dot and squared norms share one reduction so identical vectors give exactly 1
    sq = np.sum(data * data, axis=-1)
    dot = np.sum(data[:-1] * data[1:], axis=-1)
    denom = np.sqrt(sq[:-1] * sq[1:])
    zero = denom == 0.0
    cos = np.clip(dot / np.where(zero, 1.0, denom), -1.0, 1.0)
    # (anti)parallel vectors must score exactly 0 / 2 or rounding invents local maxima
    near = np.abs(cos) > 1.0 - COS_SNAP
    cos[near] = np.sign(cos[near])
    diss = 1.0 - cos
    diss[zero] = 1.0 if zero_norm_policy == "dissimilar" else 0.0
    d[1:] = diss
    return d


def variation_scoring(seq: FeatureSequence, cfg: TadConfig) -> VariationProfile:
    patch = patch_dissimilarity(seq.data, cfg.zero_norm_policy)
    if cfg.aggregation == "max":
        frame = patch.max(axis=1)
    else:
        frame = patch.mean(axis=1)
    frame[0] = 0.0
    patch.setflags(write=False)
    frame.setflags(write=False)
    return VariationProfile(frame_scores=frame, patch_scores=patch)


def local_maxima(values: np.ndarray, window: int) -> np.ndarray:
    """Indices that are the (leftmost) argmax of their own centred window.

    Windows are truncated at the sequence edges.
    """
    return np.flatnonzero(local_maxima_mask(np.asarray(values, dtype=np.float64), window))


def local_maxima_mask(values: np.ndarray, window: int) -> np.ndarray:
    """Boolean mask of local maxima along axis 0 (columns are independent).

    ``t`` is the leftmost argmax of its window iff it strictly beats every
    neighbour on its left and is not beaten by any neighbour on its right.
    """
    half = window // 2
    T = values.shape[0]
    # -inf padding stands in for the truncated part of the window
    fill = np.full((half,) + values.shape[1:], -np.inf)
    padded = np.concatenate([fill, values, fill])
    mask = np.ones(values.shape, dtype=bool)
    for d in range(1, half + 1):
        mask &= values > padded[half - d:half - d + T]
        mask &= values >= padded[half + d:half + d + T]
    return mask


def inflection_detection(profile: VariationProfile, cfg: TadConfig) -> np.ndarray:
    return local_maxima(profile.frame_scores, cfg.window)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Top ``k`` indices by score (smaller index wins ties), sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    k = min(int(k), scores.size)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def boosted_scores(variation: np.ndarray, inflections: Sequence[int], omega: float) -> np.ndarray:
    scores = np.array(variation, dtype=np.float64, copy=True)
    idx = np.asarray(inflections, dtype=np.int64)
    scores[idx] += omega
    return scores


def prioritized_distillation(
    profile: VariationProfile, inflections: Sequence[int], cfg: TadConfig
) -> SelectionResult:
    P = check_indices(inflections, profile.length)
    P = np.sort(P)
    S = boosted_scores(profile.frame_scores, P, cfg.omega)
    I = top_k_indices(S, cfg.budget)
    S.setflags(write=False)
    return SelectionResult(indices=I, scores=S, inflections=P, variation=profile)


def tad_select(seq: FeatureSequence, cfg: TadConfig) -> SelectionResult:
    """Frame-level selection. The distilled sequence is ``gather_frames(seq, result.indices)``."""
    profile = variation_scoring(seq, cfg)
    P = inflection_detection(profile, cfg)
    return prioritized_distillation(profile, P, cfg)


def select_patches(seq: FeatureSequence, cfg: TadConfig) -> list[SelectionResult]:
    """Run the three stages independently along time for every patch."""
    patch = patch_dissimilarity(seq.data, cfg.zero_norm_policy)
    results = []
    for n in range(seq.num_patches):
        column = patch[:, n].copy()
        column.setflags(write=False)
        profile = VariationProfile(frame_scores=column)
        P = inflection_detection(profile, cfg)
        results.append(prioritized_distillation(profile, P, cfg))
    return results


def tad_select_async(seq: FeatureSequence, cfg: TadConfig) -> np.ndarray:
    """Patch-level selection: an ``(N, min(K, T))`` matrix of sorted frame indices.

    Same result as stacking :func:`select_patches` indices, computed for all
    patches at once.
    """
    patch = patch_dissimilarity(seq.data, cfg.zero_norm_policy)
    boosted = patch + cfg.omega * local_maxima_mask(patch, cfg.window)
    k = min(cfg.budget, seq.num_frames)
    order = np.argsort(-boosted.T, axis=1, kind="stable")
    return np.sort(order[:, :k], axis=1)


def gather_backward(seq_shape: Sequence[int], idx: Sequence[int], upstream_grad: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`~keyframe_rl.features.gather_frames`.

    Scatters ``upstream_grad[k]`` into row ``idx[k]`` of a zero ``(T, N, C)``
    array; unselected frames get exact zeros.
    """
    T, N, C = (int(s) for s in seq_shape)
    arr = check_indices(idx, T)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (arr.size, N, C):
        raise ShapeMismatch(f"upstream gradient shape {upstream_grad.shape} != {(arr.size, N, C)}")
    out = np.zeros((T, N, C), dtype=np.float64)
    np.add.at(out, arr, upstream_grad)
    return out


def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


def selection_to_dict(seq: FeatureSequence, cfg: TadConfig) -> dict:
    """Selection report in the JSON layout used by the ``select`` command."""
    report = {
        "T": seq.num_frames,
        "K": cfg.budget,
        "W": cfg.window,
        "omega": cfg.omega,
        "aggregation": cfg.aggregation,
        "mode": cfg.mode,
    }
    if cfg.mode == "sync":
        res = tad_select(seq, cfg)
        report["indices"] = [int(i) for i in res.indices]
        report["inflections"] = [int(i) for i in res.inflections]
        report["scores"] = [_sig9(s) for s in res.scores]
    else:
        per_patch = select_patches(seq, cfg)
        report["indices"] = [[int(i) for i in r.indices] for r in per_patch]
        report["inflections"] = [[int(i) for i in r.inflections] for r in per_patch]
        report["scores"] = [[_sig9(s) for s in r.scores] for r in per_patch]
    return report


def selection_to_json(seq: FeatureSequence, cfg: TadConfig) -> str:
    return json.dumps(selection_to_dict(seq, cfg))
