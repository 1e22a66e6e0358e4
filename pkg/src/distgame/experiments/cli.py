"""Command-line entry point: ``distgame {train,eval,export}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
Relative output paths are placed under $DISTGAME_OUTPUT_ROOT when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import pydantic
import yaml

from .config import load_config
from .runner import OUTPUT_ROOT_ENV, export_plotdata, resolve_output_dir, run_eval, run_train

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("distgame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distgame",
        description="Train and evaluate attention-based distributed policies for multi-team games.",
        epilog=f"Relative --out paths are resolved under ${OUTPUT_ROOT_ENV} (default: current directory).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("config", help="experiment config (YAML or JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="run directory (default: config output_dir or runs/<name>)")
    p.add_argument("--iterations", type=int, default=None, help="override train.iterations")
    p.add_argument("--resume", default=None, help="trainer checkpoint to resume from")
    p.add_argument("--threads", type=int, default=1, help="worker threads (evaluation only; accepted for symmetry)")

    p = sub.add_parser("eval", help="evaluate checkpoints (round robin for pursuit)")
    p.add_argument("config", help="experiment config (YAML or JSON)")
    p.add_argument("--checkpoints", nargs="*", default=[], help="policy or trainer checkpoints")
    p.add_argument("--episodes", type=int, default=None, help="override eval.episodes")
    p.add_argument("--seed", type=int, default=None, help="override eval.seed")
    p.add_argument("--out", default=None, help="output directory (default: runs/<name>_eval)")
    p.add_argument("--threads", type=int, default=1, help="parallel pairings")
    p.add_argument("--trajectories", action="store_true", help="also write per-agent trajectories.jsonl")

    p = sub.add_parser("export", help="write plot-ready CSV (series,x,y,std) from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None, help="CSV path (default: <run_dir>/plotdata.csv)")
    return parser


def _load(path):
    try:
        return load_config(path)
    except pydantic.ValidationError as exc:
        print(f"invalid config {path}:\n{exc}", file=sys.stderr)
    except (yaml.YAMLError, ValueError, TypeError) as exc:
        print(f"invalid config {path}: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"cannot read config {path}: {exc}", file=sys.stderr)
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "export":
        try:
            path = export_plotdata(args.run_dir, args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"export failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(path)
        return EXIT_OK

    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    try:
        if args.command == "train":
            out = resolve_output_dir(cfg, args.out)
            result = run_train(cfg, out, seed=args.seed, iterations=args.iterations, resume=args.resume)
            print(json.dumps({"out": str(out), "iterations": len(result.metrics), "env_steps": result.env_steps}))
        else:
            out = resolve_output_dir(cfg, args.out, suffix="_eval")
            result = run_eval(
                cfg, args.checkpoints, out, episodes=args.episodes, seed=args.seed,
                threads=args.threads, trajectories=args.trajectories,
            )
            print(json.dumps({"out": str(out), "episodes": result.episodes, "summary": result.summary}, default=str))
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("run failed", exc_info=True)
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
