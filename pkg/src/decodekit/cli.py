"""Command-line entry point: ``decodekit {train-lm,decode,evaluate,analyze,report,run}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import DecodeKitError
from .harness import (
    ExperimentConfig,
    IncompleteBundleError,
    TASK_PRESETS,
    run_all,
    run_analyze,
    run_decode,
    run_evaluate,
    run_report,
    run_train,
)

STAGES = {
    "train-lm": run_train,
    "decode": run_decode,
    "evaluate": run_evaluate,
    "analyze": run_analyze,
    "report": run_report,
    "run": run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decodekit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in STAGES.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", metavar="PATH", help="JSON or YAML experiment config")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--task", choices=sorted(TASK_PRESETS))
        p.add_argument(
            "--decoder",
            action="append",
            metavar="SPEC",
            help="decoder spec such as greedy, beam:k=5 or top_p:p=0.85 (repeatable; replaces the config list)",
        )
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes for decoding")
        p.add_argument("--model", metavar="PATH", help="model file (written by train-lm)")
        p.add_argument("--corpus", metavar="PATH", help="inputs as JSON lines")
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(
        seed=args.seed,
        task=args.task,
        decoders=args.decoder,
        output_dir=args.out,
        workers=args.workers,
        model_path=args.model,
        corpus_path=args.corpus,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        path = STAGES[args.command](config)
    except IncompleteBundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DecodeKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
