"""Paired-rollout training on the synthetic ordering task."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .curation import curate_frames
from .objective import ObjectiveConfig, RolloutGroup, kf_grpo_objective
from .policy import PolicyParams, policy_forward, sample_actions
from .rewards import BaseRewardWeights, Response, kl_divergence, relative_advantage, reward_breakdown, saliency_reward
from .seeding import derive_rng, derive_seed
from .synth import (
    OrderingTask,
    SyntheticSpec,
    canonical_options,
    generate_sequence,
    make_ordering_task,
    random_event_frames,
)
from .tad import TadConfig

STREAM_DATA = 1
STREAM_ROLLOUT = 2


@dataclass(frozen=True)
class EnvConfig:
    num_frames: int = 16
    num_patches: int = 4
    channels: int = 8
    num_events: int = 3
    num_options: int = 6
    noise_sigma: float = 0.01
    min_gap: int | None = None  # default: half the TAD window + 1


@dataclass(frozen=True)
class TrainConfig:
    tad: TadConfig = field(default_factory=TadConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    delta: float = 0.5
    lr: float = 0.05
    batch_size: int = 4
    seed: int = 0
    use_variance: bool = False
    reward_weights: BaseRewardWeights = field(default_factory=BaseRewardWeights)

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class StepMetrics:
    step: int
    mean_reward: float
    r_s_rate: float
    acc_seq: float
    acc_hyb: float
    kl: float
    loss: float
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class PairedTask:
    sequential: OrderingTask
    hybrid: OrderingTask


def build_paired_task(env: EnvConfig, tad: TadConfig, delta: float, seed: int) -> PairedTask:
    """Generate one synthetic clip, curate it, and build both task variants."""
    rng = derive_rng(seed, 0)
    gap = env.min_gap if env.min_gap is not None else tad.window // 2 + 1
    events = random_event_frames(env.num_frames, env.num_events, gap, rng)
    spec = SyntheticSpec(env.num_frames, env.num_patches, env.channels, events, env.noise_sigma, derive_seed(seed, 1))
    seq, events = generate_sequence(spec)
    sample = curate_frames(seq, delta, tad)
    task_seed = derive_seed(seed, 2)
    return PairedTask(
        sequential=make_ordering_task(events, "sequential", sample, task_seed, env.num_options),
        hybrid=make_ordering_task(events, "hybrid", sample, task_seed, env.num_options),
    )


def make_batch(cfg: TrainConfig, step: int) -> list[PairedTask]:
    return [
        build_paired_task(cfg.env, cfg.tad, cfg.delta, derive_seed(cfg.seed, STREAM_DATA, step, b))
        for b in range(cfg.batch_size)
    ]


def rollout_group(
    pair: PairedTask,
    params: PolicyParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> RolloutGroup:
    """Sample M answers per variant, score the sequential ones, compute advantages."""
    M = cfg.objective.group_size
    seq_task, hyb_task = pair.sequential, pair.hybrid
    seq_actions = sample_actions(policy_forward(params, seq_task), M, rng)
    hyb_actions = sample_actions(policy_forward(params, hyb_task), M, rng)
    c = float(np.mean(seq_actions == seq_task.correct_option))
    c_hat = float(np.mean(hyb_actions == hyb_task.correct_option))
    r_s = saliency_reward(c, c_hat)
    responses = tuple(Response(int(a)) for a in seq_actions)
    breakdowns = tuple(reward_breakdown(r, seq_task.correct_option, r_s, cfg.reward_weights) for r in responses)
    adv = relative_advantage([b.total for b in breakdowns], use_variance=cfg.use_variance)
    return RolloutGroup(seq_task, responses, breakdowns, adv, c, c_hat)


@dataclass(frozen=True)
class StepResult:
    params: PolicyParams
    grad: np.ndarray
    groups: tuple[RolloutGroup, ...]
    mean_reward: float
    r_s_rate: float
    acc_seq: float
    acc_hyb: float
    kl: float
    loss: float


def train_step(
    batch: Sequence[PairedTask],
    params: PolicyParams,
    base: PolicyParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> StepResult:
    """One rollout + one gradient-ascent update on the mean objective over the batch.

    The ratio reference is the pre-update snapshot of ``params``; ``base``
    anchors the KL term.
    """
    if not batch:
        raise ValueError("empty batch")
    init = params
    groups = [rollout_group(pair, params, cfg, rng) for pair in batch]
    loss = 0.0
    grad = np.zeros_like(params.weights)
    kl = 0.0
    for g in groups:
        l, dw = kf_grpo_objective(g, params, init, base, cfg.objective)
        loss += l
        grad += dw
        kl += kl_divergence(policy_forward(params, g.task), policy_forward(base, g.task))
    n = len(groups)
    loss /= n
    grad /= n
    new = params.with_weights(params.weights - cfg.lr * grad)
    return StepResult(
        params=new,
        grad=grad,
        groups=tuple(groups),
        mean_reward=float(np.mean([b.total for g in groups for b in g.breakdowns])),
        r_s_rate=float(np.mean([g.breakdowns[0].saliency for g in groups])),
        acc_seq=float(np.mean([g.acc_seq for g in groups])),
        acc_hyb=float(np.mean([g.acc_hyb for g in groups])),
        kl=kl / n,
        loss=loss,
    )


def initial_params(cfg: TrainConfig) -> PolicyParams:
    n_opt = len(canonical_options(cfg.env.num_events, cfg.env.num_options))
    return PolicyParams.zeros(cfg.env.num_events, n_opt)


def iter_training(
    cfg: TrainConfig, steps: int, params: PolicyParams | None = None
) -> Iterator[tuple[StepMetrics, PolicyParams]]:
    """Yield ``(metrics, params_after_step)`` for each step; fully seed-determined."""
    params = initial_params(cfg) if params is None else params
    base = params
    for step in range(steps):
        batch = make_batch(cfg, step)
        rng = derive_rng(cfg.seed, STREAM_ROLLOUT, step)
        res = train_step(batch, params, base, cfg, rng)
        params = res.params
        metrics = StepMetrics(
            step=step,
            mean_reward=res.mean_reward,
            r_s_rate=res.r_s_rate,
            acc_seq=res.acc_seq,
            acc_hyb=res.acc_hyb,
            kl=res.kl,
            loss=res.loss,
            seed=cfg.seed,
        )
        yield metrics, params


def run_training(cfg: TrainConfig, steps: int) -> tuple[PolicyParams, list[StepMetrics]]:
    params = initial_params(cfg)
    history = []
    for metrics, params in iter_training(cfg, steps, params):
        history.append(metrics)
    return params, history


def window_means(history: Sequence[StepMetrics], window: int = 100, tail: bool = True) -> dict[str, float]:
    """Means of each metric over the last (or first) ``window`` steps."""
    if not history:
        return {}
    part = history[-window:] if tail else history[:window]
    keys = ("mean_reward", "r_s_rate", "acc_seq", "acc_hyb", "kl", "loss")
    return {k: float(np.mean([getattr(m, k) for m in part])) for k in keys}
