"""Command line entry point: ``eeml <stage> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import CheckpointError, ConfigError, DependencyError, NumericError
from . import pipeline
from .config import PRESETS, load_config_file, resolve

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4

STAGES = ("pretrain", "cluster", "train", "eval", "baseline", "all")


def build_parser():
    p = argparse.ArgumentParser(
        prog="eeml",
        description="Ensemble embedded meta-learning on few-shot toy regression.")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", help="JSON file with configuration overrides")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="hyperparameter preset (default: paper values)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir", help="artifact directory")
    p.add_argument("--shots", type=int, choices=(5, 10))
    p.add_argument("--order", choices=("first", "second"))
    p.add_argument("--eval-tasks", type=int, dest="eval_tasks")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def config_from_args(args):
    file_values = load_config_file(args.config) if args.config else {}
    preset = args.preset or file_values.pop("preset", None)
    return resolve(preset, file_values, seed=args.seed, out_dir=args.out_dir,
                   shots=args.shots, order=args.order, eval_tasks=args.eval_tasks)


def run(args) -> None:
    cfg = config_from_args(args)
    if args.stage == "pretrain":
        pipeline.run_pretrain(cfg)
    elif args.stage == "cluster":
        pipeline.run_cluster(cfg)
    elif args.stage == "train":
        pipeline.run_train(cfg)
    elif args.stage == "eval":
        print(pipeline.run_eval(cfg).line())
    elif args.stage == "baseline":
        print(pipeline.run_baseline(cfg).line())
    else:
        print(json.dumps(pipeline.run_all(cfg), indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"eeml: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DependencyError, CheckpointError) as exc:
        print(f"eeml: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NumericError as exc:
        print(f"eeml: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
