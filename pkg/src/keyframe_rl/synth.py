"""Synthetic feature sequences with planted events, and event-ordering tasks.

Each segment between consecutive events shows one fixed unit prototype per
patch (plus Gaussian noise). At an event frame every patch switches to a new
prototype orthogonal to the previous one, so the variation profile has a
spike of height ~1 exactly at the event.

An ordering task asks for the chronological order of the event labels. The
options are a fixed, canonical list of label permutations, so option ``k``
means the same thing in every task and a linear policy can learn it.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .curation import KEY, CuratedSample, build_hybrid
from .features import FeatureSequence
from .seeding import derive_seed

MAX_OPTIONS = 6


class TooFewEvents(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_frames: int
    num_patches: int
    channels: int
    event_frames: tuple[int, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "event_frames", tuple(int(e) for e in self.event_frames))
        if self.num_frames < 1 or self.num_patches < 1 or self.channels < 1:
            raise ValueError("dimensions must be >= 1")
        if self.event_frames and self.channels < 2:
            raise ValueError("orthogonal prototype switches need channels >= 2")
        ev = self.event_frames
        if any(b <= a for a, b in zip(ev, ev[1:])):
            raise ValueError(f"event frames must be strictly increasing, got {ev}")
        if ev and (ev[0] < 1 or ev[-1] >= self.num_frames):
            raise ValueError(f"event frames must lie in [1, {self.num_frames}), got {ev}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _orthogonal_to(prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # one Gram-Schmidt step per patch against the previous prototype
    while True:
        v = rng.standard_normal(prev.shape)
        v -= np.sum(v * prev, axis=-1, keepdims=True) * prev
        norms = np.linalg.norm(v, axis=-1)
        if np.all(norms > 1e-6):
            return v / norms[:, None]


def generate_sequence(spec: SyntheticSpec) -> tuple[FeatureSequence, tuple[int, ...]]:
    """Return the feature sequence and the planted event frames."""
    rng = np.random.default_rng(spec.seed)
    T, N, C = spec.num_frames, spec.num_patches, spec.channels
    proto = _unit(rng.standard_normal((N, C)))
    events = set(spec.event_frames)
    data = np.empty((T, N, C), dtype=np.float64)
    for t in range(T):
        if t in events:
            proto = _orthogonal_to(proto, rng)
        data[t] = proto
    if spec.noise_sigma > 0:
        data += spec.noise_sigma * rng.standard_normal(data.shape)
    return FeatureSequence(data), spec.event_frames


def random_event_frames(num_frames: int, count: int, min_gap: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniformly drawn sorted event frames in ``[1, T)`` with pairwise gaps >= ``min_gap``."""
    slack = (num_frames - 1) - (count - 1) * (min_gap - 1)
    if count < 0 or slack < count:
        raise ValueError(f"cannot place {count} events with gap {min_gap} in {num_frames} frames")
    base = np.sort(rng.choice(slack, size=count, replace=False))
    return tuple(int(b) + i * (min_gap - 1) + 1 for i, b in enumerate(base))


def save_ground_truth(path: str | os.PathLike, events: Sequence[int], seed: int) -> None:
    with open(path, "w") as fh:
        json.dump({"events": [int(e) for e in events], "seed": int(seed)}, fh)
        fh.write("\n")


def load_ground_truth(path: str | os.PathLike) -> tuple[tuple[int, ...], int]:
    with open(path) as fh:
        obj = json.load(fh)
    return tuple(int(e) for e in obj["events"]), int(obj["seed"])


# ---------------------------------------------------------------------------
# ordering tasks


def canonical_options(num_events: int, num_options: int | None = None) -> tuple[tuple[int, ...], ...]:
    perms = tuple(itertools.permutations(range(num_events)))
    n = len(perms) if num_options is None else num_options
    n = min(n, MAX_OPTIONS)
    if not 2 <= n <= len(perms):
        raise ValueError(f"num_options must lie in [2, {min(len(perms), MAX_OPTIONS)}], got {num_options}")
    return perms[:n]


@dataclass(frozen=True)
class OrderingTask:
    """One multiple-choice question about the order of planted events.

    ``frame_labels[i]`` is the event label shown by ``frame_input[i]``, or -1
    for frames that are not event frames.
    """

    question: str
    options: tuple[tuple[int, ...], ...]
    correct_option: int
    frame_input: tuple[int, ...]
    provenance: tuple[str, ...]
    frame_labels: tuple[int, ...]
    events: tuple[int, ...]
    mode: str

    @property
    def num_events(self) -> int:
        return len(self.events)

    @property
    def num_options(self) -> int:
        return len(self.options)


def make_ordering_task(
    events: Sequence[int],
    mode: Literal["sequential", "hybrid"],
    sample: CuratedSample,
    seed: int,
    num_options: int | None = None,
) -> OrderingTask:
    """Build the sequential or hybrid variant of the task keyed by ``seed``.

    Both variants built from the same ``seed`` share the question and answer;
    they differ only in which frames are shown, and in what order.
    """
    events = tuple(int(e) for e in events)
    if len(events) < 2:
        raise TooFewEvents(f"ordering needs at least 2 events, got {len(events)}")
    if mode not in ("sequential", "hybrid"):
        raise ValueError(f"unknown mode {mode!r}")
    options = canonical_options(len(events), num_options)
    rng = np.random.default_rng(derive_seed(seed, 0))
    correct = int(rng.integers(len(options)))
    # the i-th event in time shows label options[correct][i]
    label_of_frame = dict(zip(events, options[correct]))

    if mode == "sequential":
        frames = tuple(sample.keyframes)
        prov = (KEY,) * len(frames)
    else:
        hybrid = build_hybrid(sample, derive_seed(seed, 1))
        frames, prov = hybrid.frame_ids, hybrid.provenance
    labels = tuple(label_of_frame.get(f, -1) for f in frames)
    return OrderingTask(
        question=f"order-{seed}",
        options=options,
        correct_option=correct,
        frame_input=frames,
        provenance=prov,
        frame_labels=labels,
        events=events,
        mode=mode,
    )


def summary_dim(num_events: int) -> int:
    return num_events * (num_events - 1) // 2 + 1


def order_summary(task: OrderingTask) -> np.ndarray:
    """Pairwise order signs of event labels as they appear in the input.

    Entry for label pair ``a < b`` is +1 if ``a`` is shown before ``b``, -1 if
    after, 0 if either is missing. The last entry is a constant 1 (bias).
    """
    first_seen: dict[int, int] = {}
    for pos, lab in enumerate(task.frame_labels):
        if lab >= 0 and lab not in first_seen:
            first_seen[lab] = pos
    out = []
    for a, b in itertools.combinations(range(task.num_events), 2):
        if a in first_seen and b in first_seen:
            out.append(1.0 if first_seen[a] < first_seen[b] else -1.0)
        else:
            out.append(0.0)
    out.append(1.0)
    return np.asarray(out, dtype=np.float64)
