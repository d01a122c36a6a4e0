"""Command-line entry point: ``keyframe-rl {select,train,eval,sweep,generate}``.

Exit codes: 0 ok, 2 input error, 3 flag error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import replace
from typing import Iterator, Sequence, TextIO

from .features import FeatureFormatError, IoFailure, load_feature_file, save_feature_file
from .objective import ObjectiveConfig
from .policy import PolicyParams, evaluate_accuracy, load_params, save_params
from .rewards import saliency_reward
from .seeding import derive_rng, derive_seed
from .synth import SyntheticSpec, generate_sequence, random_event_frames, save_ground_truth
from .tad import TadConfig, selection_to_json
from .training import EnvConfig, TrainConfig, build_paired_task, initial_params, iter_training, window_means

log = logging.getLogger("keyframe_rl")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FLAGS = 3
EXIT_RUNTIME = 4

STREAM_EVAL = 3
STREAM_EVAL_SAMPLING = 4
STREAM_SWEEP = 5

BOOL_FLAGS = {"ppo_min", "use_variance", "argmax"}


class FlagError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise FlagError(message)


def _add_tad_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, default=8, help="frames kept, K")
    p.add_argument("--window", type=int, default=5, help="odd local-maximum window, W")
    p.add_argument("--omega", type=float, default=2.0, help="inflection boost")
    p.add_argument("--aggregation", choices=("max", "mean"), default="max")
    p.add_argument("--mode", choices=("sync", "async"), default="sync")
    p.add_argument("--zero-norm", choices=("dissimilar", "identical"), default="dissimilar")


def _add_env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--patches", type=int, default=4)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--events", type=int, default=3)
    p.add_argument("--options", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--delta", type=float, default=0.5, help="selection fraction")
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--clip-eta", type=float, default=0.2)
    p.add_argument("--kl-gamma", type=float, default=0.01)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--ppo-min", action="store_true", help="use min(unclipped, clipped) per term")
    p.add_argument("--use-variance", action="store_true", help="shift advantages by variance/2, not std/2")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keyframe-rl", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value file with flag defaults (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("select", help="select keyframes from a CFTF feature file")
    p.add_argument("--input")
    p.add_argument("--output")
    _add_tad_flags(p)

    p = sub.add_parser("train", help="train the toy policy on synthetic ordering tasks")
    p.add_argument("--output", help="metrics JSONL (stdout if omitted)")
    p.add_argument("--params", help="where to write the final policy snapshot")
    _add_tad_flags(p)
    _add_env_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved policy on sequential and hybrid tasks")
    p.add_argument("--params", help="policy snapshot to evaluate")
    p.add_argument("--output")
    p.add_argument("--tasks", type=int, default=1000)
    p.add_argument("--argmax", action="store_true")
    _add_tad_flags(p)
    _add_env_flags(p)

    p = sub.add_parser("sweep", help="train once per grid value of omega or delta")
    p.add_argument("--param", choices=("omega", "delta"))
    p.add_argument("--grid", help="comma-separated values")
    p.add_argument("--output")
    _add_tad_flags(p)
    _add_env_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("generate", help="write a synthetic CFTF sequence and its ground truth")
    p.add_argument("--output")
    p.add_argument("--truth", help="ground-truth JSON sidecar path")
    p.add_argument("--event-frames", help="comma-separated event frames (random if omitted)")
    p.add_argument("--min-gap", type=int, default=3)
    _add_env_flags(p)
    return parser


def read_config(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise FlagError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


REQUIRED = {
    "select": ("input",),
    "eval": ("params",),
    "sweep": ("param", "grid"),
    "generate": ("output",),
}


def _split_config(argv: Sequence[str]) -> tuple[str | None, list[str]]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    return known.config, rest


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    """Parse flags, using a ``--config`` file (if any) for defaults."""
    config_path, argv = _split_config(argv)
    parser = build_parser()
    if config_path:
        command = next((a for a in argv if a in COMMANDS), None)
        if command is None:
            raise FlagError("no subcommand given")
        cfg = read_config(config_path)
        subparser = parser._subparsers._group_actions[0].choices[command]  # type: ignore[union-attr]
        known = {a.dest for a in subparser._actions} - {"help"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise FlagError(f"unknown config keys for {command}: {', '.join(unknown)}")
        defaults = {}
        for key, value in cfg.items():
            if key in BOOL_FLAGS:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise FlagError(f"config key {key} expects a boolean, got {value!r}")
                defaults[key] = value.lower() in ("true", "1", "yes")
            else:
                defaults[key] = value
        # argparse applies each flag's type to string defaults
        subparser.set_defaults(**defaults)
    args = parser.parse_args(argv)
    args.config = config_path
    for dest in REQUIRED.get(args.command, ()):
        if getattr(args, dest) is None:
            raise FlagError(f"--{dest.replace('_', '-')} is required for {args.command}")
    return args


def tad_config(args) -> TadConfig:
    try:
        return TadConfig(
            budget=args.budget,
            window=args.window,
            omega=args.omega,
            aggregation=args.aggregation,
            mode=args.mode,
            zero_norm_policy=args.zero_norm,
        )
    except ValueError as exc:
        raise FlagError(str(exc)) from exc


def env_config(args) -> EnvConfig:
    if min(args.frames, args.patches, args.channels) < 1:
        raise FlagError("frames, patches and channels must be >= 1")
    if args.channels < 2:
        raise FlagError("channels must be >= 2 for event switches")
    if not 2 <= args.events <= 3:
        raise FlagError("events must be 2 or 3")
    if not 2 <= args.options <= math.factorial(args.events):
        raise FlagError(f"options must lie in [2, {math.factorial(args.events)}]")
    if not args.noise >= 0:
        raise FlagError("noise must be >= 0")
    return EnvConfig(args.frames, args.patches, args.channels, args.events, args.options, args.noise)


def train_config(args) -> TrainConfig:
    tad = tad_config(args)
    env = env_config(args)
    if args.steps < 0:
        raise FlagError("steps must be >= 0")
    try:
        obj = ObjectiveConfig(args.clip_eta, args.kl_gamma, args.group_size, args.ppo_min)
        return TrainConfig(
            tad=tad, objective=obj, env=env, delta=args.delta, lr=args.lr,
            batch_size=args.batch_size, seed=args.seed, use_variance=args.use_variance,
        )
    except ValueError as exc:
        raise FlagError(str(exc)) from exc


@contextmanager
def open_output(path: str | None) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
        return
    try:
        fh = open(path, "w")
    except OSError as exc:
        raise InputError(f"cannot open {path} for writing: {exc}") from exc
    with fh:
        yield fh


def cmd_select(args) -> int:
    cfg = tad_config(args)
    seq = load_feature_file(args.input)
    with open_output(args.output) as out:
        out.write(selection_to_json(seq, cfg) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = train_config(args)
    params = None
    with open_output(args.output) as out:
        params = initial_params(cfg)
        for metrics, params in iter_training(cfg, args.steps, params):
            out.write(metrics.to_json() + "\n")
            if args.verbose and metrics.step % 100 == 0:
                log.info("step %d acc_seq=%.3f acc_hyb=%.3f", metrics.step, metrics.acc_seq, metrics.acc_hyb)
    if args.params:
        save_params(params, args.params)
    return EXIT_OK


def _events_from_summary_dim(dim: int) -> int:
    for e in (2, 3):
        if e * (e - 1) // 2 + 1 == dim:
            return e
    raise InputError(f"policy snapshot has {dim} summary rows; expected 2 (2 events) or 4 (3 events)")


def evaluate_policy(params: PolicyParams, env: EnvConfig, tad: TadConfig, delta: float,
                    n_tasks: int, seed: int, argmax: bool) -> dict:
    """Accuracy of ``params`` on fresh sequential and hybrid task sets."""
    pairs = [build_paired_task(env, tad, delta, derive_seed(seed, STREAM_EVAL, i)) for i in range(n_tasks)]
    rng = derive_rng(seed, STREAM_EVAL_SAMPLING)
    c = evaluate_accuracy(params, [p.sequential for p in pairs], rng, argmax)
    c_hat = evaluate_accuracy(params, [p.hybrid for p in pairs], rng, argmax)
    return {"acc_seq": c, "acc_hyb": c_hat, "r_s": saliency_reward(c, c_hat),
            "tasks": n_tasks, "argmax": argmax, "seed": seed}


def cmd_eval(args) -> int:
    tad = tad_config(args)
    if args.tasks < 1:
        raise FlagError("tasks must be >= 1")
    if not 0.0 < args.delta <= 1.0:
        raise FlagError(f"delta must lie in (0, 1], got {args.delta}")
    try:
        params = load_params(args.params)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot load policy snapshot {args.params}: {exc}") from exc
    events = _events_from_summary_dim(params.weights.shape[0])
    args.events, args.options = events, params.num_options
    env = env_config(args)
    report = evaluate_policy(params, env, tad, args.delta, args.tasks, args.seed, args.argmax)
    with open_output(args.output) as out:
        out.write(json.dumps(report) + "\n")
    return EXIT_OK


def parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise FlagError(f"bad grid {text!r}: {exc}") from exc
    if not grid:
        raise FlagError("grid must not be empty")
    return grid


def sweep(base: TrainConfig, param: str, grid: Sequence[float], steps: int) -> list[dict]:
    """Train once per grid value; rows are reported even when a run fails."""
    rows = []
    for i, value in enumerate(grid):
        seed = derive_seed(base.seed, STREAM_SWEEP, i)
        row = {"param": param, "value": value, "seed": seed, "steps": steps}
        try:
            if param == "omega":
                cfg = replace(base, tad=replace(base.tad, omega=value), seed=seed)
            else:
                cfg = replace(base, delta=value, seed=seed)
            history = [m for m, _ in iter_training(cfg, steps)]
            row.update(window_means(history))
            row["status"] = "ok"
        except Exception as exc:  # a failed grid point is a result, not a crash
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    base = train_config(args)
    grid = parse_grid(args.grid)
    if args.param == "delta" and any(not 0.0 < v <= 1.0 for v in grid):
        raise FlagError("delta grid values must lie in (0, 1]")
    if args.param == "omega" and any(not v >= 0 for v in grid):
        raise FlagError("omega grid values must be >= 0")
    rows = sweep(base, args.param, grid, args.steps)
    summary = {"param": args.param, "master_seed": args.seed, "rows": rows}
    with open_output(args.output) as out:
        out.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_generate(args) -> int:
    env = env_config(args)
    rng = derive_rng(args.seed, 0)
    if args.event_frames:
        try:
            events = tuple(int(v) for v in args.event_frames.split(",") if v.strip())
        except ValueError as exc:
            raise FlagError(f"bad event frames: {exc}") from exc
    else:
        try:
            events = random_event_frames(env.num_frames, env.num_events, args.min_gap, rng)
        except ValueError as exc:
            raise FlagError(str(exc)) from exc
    try:
        spec = SyntheticSpec(env.num_frames, env.num_patches, env.channels, events, env.noise_sigma,
                             derive_seed(args.seed, 1))
    except ValueError as exc:
        raise FlagError(str(exc)) from exc
    seq, events = generate_sequence(spec)
    save_feature_file(seq, args.output)
    if args.truth:
        save_ground_truth(args.truth, events, args.seed)
    return EXIT_OK


COMMANDS = {
    "select": cmd_select,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "generate": cmd_generate,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except FlagError as exc:
        print(f"keyframe-rl: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except InputError as exc:
        print(f"keyframe-rl: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except FlagError as exc:
        print(f"keyframe-rl: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (FeatureFormatError, IoFailure, InputError) as exc:
        print(f"keyframe-rl: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"keyframe-rl: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
