"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or
``python3 tests/test_acceptance.py``); the verdict lines are printed even
when pytest captures output.
"""

import itertools
import math
import struct
import time
from contextlib import contextmanager

import numpy as np
import pytest

from keyframe_rl.cli import main, sweep
from keyframe_rl.features import FeatureSequence, gather_frames, load_feature_file, save_feature_file
from keyframe_rl.objective import ObjectiveConfig, RolloutGroup, kf_grpo_objective
from keyframe_rl.policy import PolicyParams, log_prob_grad, policy_forward, save_params
from keyframe_rl.rewards import Response, relative_advantage
from keyframe_rl.seeding import derive_rng
from keyframe_rl.synth import SyntheticSpec, generate_sequence, random_event_frames
from keyframe_rl.tad import TadConfig, gather_backward, tad_select, tad_select_async, variation_scoring
from keyframe_rl.training import EnvConfig, TrainConfig, build_paired_task, run_training, window_means

import naive


@pytest.fixture
def verdict(capsys):
    @contextmanager
    def run(num, title):
        info = {}
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield info
            status = "PASS"
        finally:
            info["time_s"] = round(time.perf_counter() - t0, 2)
            extra = " ".join(f"{k}={v}" for k, v in info.items())
            with capsys.disabled():
                print(f"\nAC{num:<2} {status}  {title}  [{extra}]", flush=True)

    return run


# --- selection ---------------------------------------------------------------


ALPHABET = [
    [[1.0, 0.0], [1.0, 0.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[1.0, 0.0], [-1.0, 0.0]],
]


def check_against_oracle(frames, K, W, omega):
    seq = FeatureSequence(np.asarray(frames, dtype=float))
    for agg in ("max", "mean"):
        got = tad_select(seq, TadConfig(budget=K, window=W, omega=omega, aggregation=agg))
        I, P, _, _ = naive.select(frames, K, W, omega, agg)
        if got.indices.tolist() != I or got.inflections.tolist() != P:
            return False
    got = tad_select_async(seq, TadConfig(budget=K, window=W, omega=omega, mode="async"))
    return got.tolist() == naive.select_async(frames, K, W, omega)


def test_ac1_oracle_equivalence(verdict):
    with verdict(1, "selection matches chained loop oracles") as info:
        t0 = time.perf_counter()
        n = mismatches = 0
        # every sequence of length <= 8 over a tie-heavy 3-frame alphabet
        for T in range(1, 9):
            for combo in itertools.product(range(3), repeat=T):
                frames = [ALPHABET[c] for c in combo]
                mismatches += not check_against_oracle(frames, 1 + n % T, (3, 5, 7)[n % 3], 2.0)
                n += 1
        info["exhaustive"] = n
        rng = np.random.default_rng(101)
        for i in range(1000):
            T, N, C = int(rng.integers(1, 33)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
            if i % 2:
                data = rng.integers(-1, 2, size=(T, N, C)).astype(float)  # small ints: many ties
            else:
                data = rng.standard_normal((T, N, C))
            K = int(rng.integers(1, T + 3))
            W = int(rng.choice([3, 5, 7, 9]))
            omega = float(rng.choice([0.0, 0.5, 2.0, rng.uniform(0, 3)]))
            mismatches += not check_against_oracle(data.tolist(), K, W, omega)
        info["random"] = 1000
        info["mismatches"] = mismatches
        elapsed = time.perf_counter() - t0
        assert mismatches == 0
        assert elapsed < 10.0


def test_ac2_scale_invariance(verdict):
    with verdict(2, "per-frame positive rescaling leaves selection unchanged") as info:
        rng = np.random.default_rng(202)
        worst = 0.0
        flips = 0
        for _ in range(500):
            T, N, C = int(rng.integers(2, 33)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
            data = rng.standard_normal((T, N, C))
            scale = 10.0 ** rng.uniform(-3, 3, size=(T, 1, 1))
            cfg = TadConfig(budget=int(rng.integers(1, T + 1)), window=int(rng.choice([3, 5, 7])),
                            aggregation=str(rng.choice(["max", "mean"])))
            a = tad_select(FeatureSequence(data), cfg)
            b = tad_select(FeatureSequence(data * scale), cfg)
            flips += a.indices.tolist() != b.indices.tolist()
            worst = max(worst, float(np.max(np.abs(a.scores - b.scores))))
        info["index_mismatches"] = flips
        info["max_score_diff"] = f"{worst:.2e}"
        assert flips == 0
        assert worst <= 1e-12


def test_ac3_boost_dominance(verdict):
    with verdict(3, "boosted inflections are always kept") as info:
        rng = np.random.default_rng(303)
        missed = 0
        for _ in range(500):
            T, N, C = int(rng.integers(1, 33)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
            seq = FeatureSequence(rng.standard_normal((T, N, C)))
            W = int(rng.choice([3, 5, 7]))
            agg = str(rng.choice(["max", "mean"]))
            V = variation_scoring(seq, TadConfig(aggregation=agg)).frame_scores
            omega = float(V.max() - V.min()) + float(rng.uniform(1e-3, 2.0))
            probe = tad_select(seq, TadConfig(window=W, aggregation=agg))
            K = int(rng.integers(probe.inflections.size, T + 1)) if probe.inflections.size < T else T
            res = tad_select(seq, TadConfig(budget=max(K, 1), window=W, omega=omega, aggregation=agg))
            missed += not set(res.inflections.tolist()) <= set(res.indices.tolist())
        info["violations"] = missed
        assert missed == 0


def test_ac4_gather_gradient(verdict):
    with verdict(4, "gather adjoint matches finite differences") as info:
        rng = np.random.default_rng(404)
        h = 1e-6
        worst = 0.0
        nonzero_unselected = 0
        for _ in range(100):
            T, N, C = int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
            X = rng.standard_normal((T, N, C))
            idx = sorted(rng.choice(T, size=int(rng.integers(1, T + 1)), replace=False).tolist())
            G = rng.standard_normal((len(idx), N, C))

            def loss(arr):
                return float(np.sum(G * gather_frames(FeatureSequence(arr), idx).data))

            grad = gather_backward(X.shape, idx, G)
            num = np.zeros_like(X)
            for pos in np.ndindex(*X.shape):
                up, down = X.copy(), X.copy()
                up[pos] += h
                down[pos] -= h
                num[pos] = (loss(up) - loss(down)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(grad - num)) / np.max(np.abs(num))))
            rest = [t for t in range(T) if t not in idx]
            nonzero_unselected += int(np.count_nonzero(grad[rest]))
        info["max_rel_err"] = f"{worst:.2e}"
        info["nonzero_unselected"] = nonzero_unselected
        assert worst < 1e-6
        assert nonzero_unselected == 0


# --- training signal ---------------------------------------------------------


def test_ac5_advantage_identity(verdict):
    with verdict(5, "mean advantage equals half the group spread") as info:
        rng = np.random.default_rng(505)
        worst = 0.0
        for i in range(1000):
            M = int(rng.integers(1, 17))
            if i % 2:
                r_s = int(rng.integers(2))
                correct = rng.integers(2, size=M)
                rewards = 1.0 * correct + 0.1 + r_s * correct
            else:
                rewards = rng.normal(scale=rng.uniform(0.01, 100), size=M)
            adv = relative_advantage(rewards)
            mu = math.fsum(rewards) / M
            sigma = math.sqrt(math.fsum((r - mu) ** 2 for r in rewards) / M)
            worst = max(worst, abs(float(np.mean(adv)) - sigma / 2))
        constant_ok = all(
            np.all(relative_advantage(np.full(int(m), v)) == 0.0)
            for m, v in zip(rng.integers(1, 17, size=200), rng.normal(size=200))
        )
        info["max_err"] = f"{worst:.2e}"
        info["constant_groups_zero"] = constant_ok
        assert worst < 1e-12
        assert constant_ok


def _toy_tasks():
    return [build_paired_task(EnvConfig(num_events=e, num_options=o), TadConfig(), 0.5, s).sequential
            for s, (e, o) in enumerate([(2, 2), (3, 3), (3, 4), (3, 5)] * 5)]


def _group(task, actions, adv):
    return RolloutGroup(task, tuple(Response(int(a)) for a in actions), (), np.asarray(adv, float), 0.0, 0.0)


def test_ac6_objective_gradient(verdict):
    with verdict(6, "objective gradient matches finite differences") as info:
        rng = np.random.default_rng(606)
        tasks = _toy_tasks()
        h = 1e-6
        worst = 0.0
        done = 0
        while done < 200:
            task = tasks[done % len(tasks)]
            D = task.num_events * (task.num_events - 1) // 2 + 1
            init = PolicyParams(rng.standard_normal((D, task.num_options)))
            theta = init.with_weights(init.weights + 0.02 * rng.standard_normal(init.weights.shape))
            base = PolicyParams(rng.standard_normal((D, task.num_options)))
            M = int(rng.integers(1, 9))
            cfg = ObjectiveConfig(clip_eta=0.2, kl_gamma=float(rng.uniform(0, 1)), group_size=M,
                                  ppo_min_variant=bool(done % 2))
            actions = rng.integers(task.num_options, size=M)
            ratios = policy_forward(theta, task)[actions] / policy_forward(init, task)[actions]
            if np.any(np.abs(ratios - 1.0) > 0.19):
                continue  # keep to the interior of the clip band
            g = _group(task, actions, rng.normal(size=M))
            _, grad = kf_grpo_objective(g, theta, init, base, cfg)
            num = np.zeros_like(grad)
            for pos in np.ndindex(*grad.shape):
                w = theta.weights.copy()
                w[pos] += h
                up, _ = kf_grpo_objective(g, theta.with_weights(w), init, base, cfg)
                w[pos] -= 2 * h
                down, _ = kf_grpo_objective(g, theta.with_weights(w), init, base, cfg)
                num[pos] = (up - down) / (2 * h)
            worst = max(worst, float(np.max(np.abs(grad - num)) / max(np.max(np.abs(num)), 1e-12)))
            done += 1

        # no KL, an unclippable band, one response: the score-function gradient
        wide = ObjectiveConfig(clip_eta=1.0 - 1e-12, kl_gamma=0.0, group_size=1)
        reinforce = 0.0
        used = 0
        while used < 200:
            task = tasks[used % len(tasks)]
            D = task.num_events * (task.num_events - 1) // 2 + 1
            init = PolicyParams(rng.standard_normal((D, task.num_options)))
            theta = init.with_weights(init.weights + 0.1 * rng.standard_normal(init.weights.shape))
            a = int(rng.integers(task.num_options))
            R = float(rng.normal())
            ratio = policy_forward(theta, task)[a] / policy_forward(init, task)[a]
            if not 1e-9 < ratio < 2.0 - 1e-9:
                continue  # the band can be at most (0, 2)
            used += 1
            _, grad = kf_grpo_objective(_group(task, [a], [R]), theta, init, init, wide)
            expected = ratio * log_prob_grad(theta, task, a) * R
            reinforce = max(reinforce, float(np.max(np.abs(-grad - expected))))
        info["max_rel_err"] = f"{worst:.2e}"
        info["reinforce_err"] = f"{reinforce:.2e}"
        assert worst < 1e-5
        assert reinforce <= 1e-10


def test_ac7_end_to_end_learning(verdict):
    with verdict(7, "default training separates ordered from shuffled input") as info:
        t0 = time.perf_counter()
        _, history = run_training(TrainConfig(seed=0), 2000)
        elapsed = time.perf_counter() - t0
        first, last = window_means(history, tail=False), window_means(history)
        gap = last["acc_seq"] - last["acc_hyb"]
        info["c"] = round(last["acc_seq"], 3)
        info["c_hat"] = round(last["acc_hyb"], 3)
        info["r_s_first"] = round(first["r_s_rate"], 3)
        info["r_s_last"] = round(last["r_s_rate"], 3)
        assert gap >= 0.10
        assert last["r_s_rate"] > first["r_s_rate"]
        assert elapsed < 60.0


# --- environment -------------------------------------------------------------


def test_ac8_planted_event_recovery(verdict):
    with verdict(8, "planted events recovered under small noise") as info:
        hits = 0
        for trial in range(1000):
            rng = derive_rng(808, trial)
            events = random_event_frames(16, 3, 3, rng)
            seq, _ = generate_sequence(SyntheticSpec(16, 4, 8, events, 0.01, seed=int(rng.integers(2**31))))
            chosen = set(tad_select(seq, TadConfig(budget=3, window=5)).indices.tolist())
            hits += set(events) <= chosen
        info["rate"] = hits / 1000
        assert hits >= 990


def test_ac9_delta_sweep(verdict):
    with verdict(9, "delta 0.5 beats delta 0.1; sweep completes") as info:
        steps = 500
        grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        full = sweep(TrainConfig(seed=0), "delta", grid, steps)
        finals = {0: {r["value"]: r.get("acc_seq") for r in full}}
        for seed in range(1, 5):
            finals[seed] = {r["value"]: r.get("acc_seq") for r in sweep(TrainConfig(seed=seed), "delta", [0.1, 0.5], steps)}
        wins = sum(f[0.5] >= f[0.1] for f in finals.values())
        info["wins"] = f"{wins}/5"
        info["c@0.1"] = [round(f[0.1], 3) for f in finals.values()]
        info["c@0.5"] = [round(f[0.5], 3) for f in finals.values()]
        assert len(full) == len(grid) and all(r["status"] == "ok" for r in full)
        assert wins >= 3


# --- determinism and file format ------------------------------------------


def _run_twice(tmp_path, name, argv):
    blobs = []
    for i in range(2):
        out = tmp_path / f"{name}{i}"
        assert main([str(a) for a in argv] + ["--output", str(out)]) == 0
        blobs.append(out.read_bytes())
    return blobs[0] == blobs[1]


def test_ac10_determinism_and_round_trip(verdict, tmp_path, capsys):
    with verdict(10, "byte-identical reruns and CFTF round trip") as info:
        feat = tmp_path / "in.cftf"
        assert main(["generate", "--output", str(feat), "--seed", "4"]) == 0
        params = tmp_path / "p.json"
        save_params(PolicyParams(np.random.default_rng(9).standard_normal((4, 6))), params)
        same = {
            "generate": _run_twice(tmp_path, "gen", ["generate", "--seed", 4]),
            "select": _run_twice(tmp_path, "sel", ["select", "--input", feat, "--budget", 5]),
            "select_async": _run_twice(tmp_path, "asy", ["select", "--input", feat, "--mode", "async"]),
            "train": _run_twice(tmp_path, "tr", ["train", "--steps", 20, "--seed", 3]),
            "eval": _run_twice(tmp_path, "ev", ["eval", "--params", params, "--tasks", 200, "--seed", 3]),
            "sweep": _run_twice(tmp_path, "sw", ["sweep", "--param", "omega", "--grid", "1,2", "--steps", 5]),
        }
        capsys.readouterr()

        rng = np.random.default_rng(1010)
        mismatched = 0
        src, dst = tmp_path / "src.cftf", tmp_path / "dst.cftf"
        for _ in range(1000):
            T, N, C = (int(v) for v in rng.integers(1, 9, size=3))
            # arbitrary finite float32 bit patterns, including subnormals and -0.0
            bits = rng.integers(0, 2**32, size=T * N * C, dtype=np.uint64).astype(np.uint32)
            values = bits.view(np.float32)
            values = np.where(np.isfinite(values), values, np.float32(1.5))
            buf = struct.pack("<4sIIII", b"CFTF", 1, T, N, C) + values.astype("<f4").tobytes()
            src.write_bytes(buf)
            save_feature_file(load_feature_file(src), dst)
            mismatched += dst.read_bytes() != buf
        info["reruns_identical"] = all(same.values())
        info["round_trip_mismatches"] = mismatched
        assert all(same.values()), same
        assert mismatched == 0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
