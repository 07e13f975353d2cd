"""Command-line entry point: ``coexrl run | report | selftest``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import (AGENTS, ExperimentConfig, read_csv, run_and_write, summarize,
                      write_summary)

log = logging.getLogger("coexrl")


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="coexrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write records.csv + summary.json")
    run.add_argument("--scenario", choices=("static", "hopping"), default="static")
    run.add_argument("--agent", choices=AGENTS, default="ddqn")
    run.add_argument("--episodes", type=_positive, default=250)
    run.add_argument("--training-episodes", type=_positive, default=100)
    run.add_argument("--reps", type=_positive, default=15)
    run.add_argument("--seed", type=_seed, default=0)
    run.add_argument("--jobs", type=_positive, default=1, help="worker processes for repetitions")
    run.add_argument("--out", required=True, help="output directory")

    report = sub.add_parser("report", help="recompute summary.json from records.csv")
    report.add_argument("--in", dest="in_dir", required=True)

    sub.add_parser("selftest", help="run the built-in property checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            config = ExperimentConfig(
                scenario=args.scenario, variant=args.agent, episodes=args.episodes,
                training_episodes=args.training_episodes, repetitions=args.reps,
                master_seed=args.seed,
            )
            log.info("running %s", config)
            _, summary = run_and_write(config, args.out, n_jobs=args.jobs)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "report":
            scenario, agent, records = read_csv(os.path.join(args.in_dir, "records.csv"))
            summary = summarize(records, scenario, agent)
            write_summary(summary, os.path.join(args.in_dir, "summary.json"))
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "selftest":
            from .selftest import run_all

            return 0 if run_all(verbose=True) else 1
    except (OSError, ValueError) as exc:
        print(f"coexrl: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
