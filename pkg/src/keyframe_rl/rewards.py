"""Reward components, group-relative advantages and categorical KL."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class SupportMismatch(ValueError):
    pass


class UndefinedDivergence(ValueError):
    pass


@dataclass(frozen=True)
class Response:
    option: int
    well_formed: bool = True


@dataclass(frozen=True)
class RewardBreakdown:
    base: float
    accuracy: float
    saliency: int
    total: float


@dataclass(frozen=True)
class BaseRewardWeights:
    correct: float = 1.0
    format: float = 0.1


def saliency_reward(acc_seq: float, acc_hyb: float) -> int:
    """1 if the ordered ensemble strictly beats the disordered one, else 0."""
    return int(acc_seq > acc_hyb)


def aggregate_reward(base: float, acc: float, r_s: int) -> float:
    return base + r_s * acc


def base_reward(response: Response, ground_truth: int, weights: BaseRewardWeights = BaseRewardWeights()) -> float:
    """Correctness plus a small bonus for a well-formed response."""
    b = 0.0
    if response.option == ground_truth:
        b += weights.correct
    if response.well_formed:
        b += weights.format
    return b


def reward_breakdown(response: Response, ground_truth: int, r_s: int,
                     weights: BaseRewardWeights = BaseRewardWeights()) -> RewardBreakdown:
    b = base_reward(response, ground_truth, weights)
    acc = 1.0 if response.option == ground_truth else 0.0
    return RewardBreakdown(base=b, accuracy=acc, saliency=r_s, total=aggregate_reward(b, acc, r_s))


def relative_advantage(rewards: Sequence[float], use_variance: bool = False) -> np.ndarray:
    """Shift each reward by ``-mean + spread / 2`` within its group.

    ``spread`` is the population standard deviation, or the population
    variance when ``use_variance`` is set. Constant groups map to zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty reward group")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    mu = r.mean()
    var = np.mean((r - mu) ** 2)
    spread = var if use_variance else math.sqrt(var)
    return r - mu + spread / 2.0


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) in nats, with 0 * log(0 / q) = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise SupportMismatch(f"support sizes differ: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        raise UndefinedDivergence("p has mass where q is zero")
    kl = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return max(kl, 0.0)
