"""Command-line entry point: one executable, one subcommand per stage."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .detectors import METHODS
from .errors import ConfigError, UbsDetectError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as one machine-parseable line."""

    def error(self, message):
        print(f"error: ConfigError: {message}", file=sys.stderr)
        raise SystemExit(2)


def _setup_logging() -> None:
    level = os.environ.get("UBS_LOG", "info").lower()
    numeric = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(level)
    if numeric is None:
        raise ConfigError(f"UBS_LOG must be error/info/debug, got {level!r}")
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ubsdetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="JSON run config (defaults apply)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread count to request")
        return p

    add("synth", "generate synthetic activity logs with ground-truth labels")
    add("ingest", "parse logs and emit session feature records")
    add("build-ubs", "build, split, normalize, and store user tensors")
    p = add("train", "train one model on the benign training tensors")
    p.add_argument("--model", choices=("transformer", "auto-tab", "auto-ubs"), default="transformer")
    p = add("score", "write per-user reconstruction-error summaries")
    p.add_argument("--model", choices=("transformer", "auto-tab", "auto-ubs"), default="transformer")
    p = add("detect", "fit detectors on training summaries, flag test users")
    p.add_argument("--model", choices=("transformer", "auto-tab", "auto-ubs"), default="transformer")
    p.add_argument("--method", choices=(*METHODS, "all"), default="all")
    add("eval", "compute metrics from verdicts and emit the report")
    add("pipeline", "run every stage in order")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.threads is not None:
            # effective only for BLAS pools spun up after this point
            os.environ["OPENBLAS_NUM_THREADS"] = str(args.threads)
            os.environ["OMP_NUM_THREADS"] = str(args.threads)
        cfg = load_config(args.config, seed_override=args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "synth":
            pipeline.stage_synth(cfg, out)
        elif args.command == "ingest":
            pipeline.stage_ingest(cfg, out)
        elif args.command == "build-ubs":
            pipeline.stage_build_ubs(cfg, out)
        elif args.command == "train":
            pipeline.stage_train(cfg, out, args.model)
        elif args.command == "score":
            pipeline.stage_score(cfg, out, args.model)
        elif args.command == "detect":
            methods = METHODS if args.method == "all" else (args.method,)
            for method in methods:
                pipeline.stage_detect(cfg, out, args.model, method)
        elif args.command == "eval":
            pipeline.stage_eval(cfg, out)
        elif args.command == "pipeline":
            pipeline.run_pipeline(cfg, out)
        return 0
    except UbsDetectError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: StageFailure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
