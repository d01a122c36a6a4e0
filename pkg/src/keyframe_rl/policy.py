"""Linear softmax policy over the options of an ordering task."""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .synth import OrderingTask, canonical_options, order_summary, summary_dim


@dataclass(frozen=True)
class PolicyParams:
    """``weights`` maps the order summary (rows) to option logits (columns)."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        if not (self.temperature > 0 and np.isfinite(self.temperature)):
            raise ValueError(f"temperature must be a positive real, got {self.temperature}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, num_events: int, num_options: int, temperature: float = 1.0) -> "PolicyParams":
        return cls(np.zeros((summary_dim(num_events), num_options)), temperature)

    @property
    def num_options(self) -> int:
        return self.weights.shape[1]

    def with_weights(self, weights: np.ndarray) -> "PolicyParams":
        return PolicyParams(weights, self.temperature)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def _check(params: PolicyParams, x: np.ndarray, task: OrderingTask):
    if params.weights.shape != (x.size, task.num_options):
        raise ValueError(
            f"policy weights {params.weights.shape} do not fit task "
            f"({x.size} summary features, {task.num_options} options)"
        )


def policy_logits(params: PolicyParams, task: OrderingTask) -> np.ndarray:
    x = order_summary(task)
    _check(params, x, task)
    return x @ params.weights / params.temperature


def policy_forward(params: PolicyParams, task: OrderingTask) -> np.ndarray:
    """Categorical distribution over ``task.options``."""
    return softmax(policy_logits(params, task))


def log_prob_grad(params: PolicyParams, task: OrderingTask, action: int) -> np.ndarray:
    """d log pi(action) / d weights."""
    x = order_summary(task)
    _check(params, x, task)
    p = softmax(x @ params.weights / params.temperature)
    g = -p
    g[action] += 1.0
    return np.outer(x, g) / params.temperature


def policy_jacobian(params: PolicyParams, task: OrderingTask) -> np.ndarray:
    """d pi_k / d W[d, o], shape ``(options, summary_dim, options)``."""
    x = order_summary(task)
    _check(params, x, task)
    p = softmax(x @ params.weights / params.temperature)
    dz = np.diag(p) - np.outer(p, p)  # d p_k / d z_o
    return np.einsum("ko,d->kdo", dz, x) / params.temperature


def oracle_params(num_events: int, num_options: int | None = None, scale: float = 1.0) -> PolicyParams:
    """Hand-set weights: logit of option k = agreements - disagreements with the observed order."""
    options = canonical_options(num_events, num_options)
    pairs = list(itertools.combinations(range(num_events), 2))
    w = np.zeros((summary_dim(num_events), len(options)))
    for k, opt in enumerate(options):
        rank = {lab: i for i, lab in enumerate(opt)}
        for r, (a, b) in enumerate(pairs):
            w[r, k] = 1.0 if rank[a] < rank[b] else -1.0
    return PolicyParams(scale * w)


def sample_actions(probs: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs)
    u = rng.random(size) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), probs.size - 1)


def evaluate_accuracy(
    params: PolicyParams,
    tasks: Sequence[OrderingTask],
    rng: np.random.Generator | None = None,
    argmax: bool = False,
) -> float:
    """Fraction of tasks answered correctly.

    With ``argmax`` the most likely option is taken (lowest index on ties);
    otherwise one answer is sampled per task from ``rng``.
    """
    if not tasks:
        raise ValueError("need at least one task")
    if not argmax and rng is None:
        raise ValueError("sampled evaluation needs an rng")
    hits = 0
    for task in tasks:
        p = policy_forward(params, task)
        a = int(np.argmax(p)) if argmax else int(sample_actions(p, 1, rng)[0])
        hits += a == task.correct_option
    return hits / len(tasks)


def save_params(params: PolicyParams, path: str | os.PathLike) -> None:
    obj = {"weights": params.weights.tolist(), "temperature": params.temperature}
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_params(path: str | os.PathLike) -> PolicyParams:
    with open(path) as fh:
        obj = json.load(fh)
    return PolicyParams(np.asarray(obj["weights"], dtype=np.float64), float(obj["temperature"]))
