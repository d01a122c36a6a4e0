"""Clipped, KL-regularized group-relative policy objective with analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import PolicyParams, policy_forward
from .rewards import RewardBreakdown, Response, kl_divergence
from .synth import OrderingTask, order_summary


class ZeroInitProbability(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveConfig:
    clip_eta: float = 0.2
    kl_gamma: float = 0.01
    group_size: int = 8
    ppo_min_variant: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip_eta < 1.0:
            raise ValueError(f"clip_eta must lie in (0, 1), got {self.clip_eta}")
        if not (self.kl_gamma >= 0 and np.isfinite(self.kl_gamma)):
            raise ValueError(f"kl_gamma must be a non-negative real, got {self.kl_gamma}")
        if int(self.group_size) != self.group_size or self.group_size < 1:
            raise ValueError(f"group_size must be a positive integer, got {self.group_size}")


@dataclass(frozen=True)
class RolloutGroup:
    """Responses sampled for one task, with rewards and shifted advantages."""

    task: OrderingTask
    responses: tuple[Response, ...]
    breakdowns: tuple[RewardBreakdown, ...]
    advantages: np.ndarray
    acc_seq: float
    acc_hyb: float

    @property
    def group_size(self) -> int:
        return len(self.responses)


def _kl_logit_grad(p: np.ndarray, q: np.ndarray) -> tuple[float, np.ndarray]:
    kl = kl_divergence(p, q)
    return kl, p * (np.log(p) - np.log(q) - kl)


def kf_grpo_objective(
    group: RolloutGroup,
    theta: PolicyParams,
    init: PolicyParams,
    base: PolicyParams,
    cfg: ObjectiveConfig,
) -> tuple[float, np.ndarray]:
    """Loss ``-[mean_j clip(ratio_j) * R_j - gamma * KL(pi_theta || pi_base)]`` and its gradient.

    ``ratio_j = pi_theta(a_j) / pi_init(a_j)``. Saturated clip terms contribute
    no gradient. With ``cfg.ppo_min_variant`` each term is instead
    ``min(ratio_j * R_j, clip(ratio_j) * R_j)``.

    Returns:
        ``(loss, grad)`` where ``grad`` has the shape of ``theta.weights``.
    """
    task = group.task
    x = order_summary(task)
    tau = theta.temperature
    p = policy_forward(theta, task)
    p_init = policy_forward(init, task)
    p_base = policy_forward(base, task)
    lo, hi = 1.0 - cfg.clip_eta, 1.0 + cfg.clip_eta
    M = group.group_size

    surrogate = 0.0
    dz = np.zeros_like(p)  # d surrogate / d logits
    for resp, adv in zip(group.responses, group.advantages):
        a = resp.option
        if p_init[a] <= 0.0:
            raise ZeroInitProbability(f"reference policy gives option {a} zero probability")
        ratio = p[a] / p_init[a]
        clipped = min(max(ratio, lo), hi)
        if cfg.ppo_min_variant and ratio * adv <= clipped * adv:
            term, live = ratio * adv, True
        else:
            term, live = clipped * adv, lo <= ratio <= hi
        surrogate += term
        if live:
            g = -ratio * adv * p
            g[a] += ratio * adv
            dz += g
    surrogate /= M
    dz /= M

    if cfg.kl_gamma > 0:
        kl, dkl = _kl_logit_grad(p, p_base)
    else:
        kl, dkl = kl_divergence(p, p_base), np.zeros_like(p)
    objective = surrogate - cfg.kl_gamma * kl
    d_obj = dz - cfg.kl_gamma * dkl
    grad = -np.outer(x, d_obj) / tau
    return -objective, grad


def surrogate_value(ratios: Sequence[float], advantages: Sequence[float], cfg: ObjectiveConfig) -> float:
    """Mean clipped surrogate for explicit ratios (no policy involved)."""
    r = np.asarray(ratios, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    clipped = np.clip(r, 1.0 - cfg.clip_eta, 1.0 + cfg.clip_eta) * adv
    if cfg.ppo_min_variant:
        clipped = np.minimum(r * adv, clipped)
    return float(clipped.mean())
