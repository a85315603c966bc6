"""
Batch entry point:

    python cli.py sample|fit|validate|optimize|report --config configs/ventilator.json
           [--cache PATH] [--model PATH] [--seed N] [--workers N] [--log-level LEVEL]

Exit codes: 0 success, 1 configuration or cache error, 2 numeric failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core.errors import CacheIntegrityError, ConfigError, NumericError
from core.models import load_config
from core.router import COMMAND_NAMES, RunOptions, dispatch

logger = logging.getLogger("fourbar")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourbar", description="Four-bar PTP design optimization pipeline")
    parser.add_argument("command", choices=COMMAND_NAMES)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--cache", type=Path, default=None)
    parser.add_argument("--model", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)

    try:
        cfg = load_config(args.config)
        opts = RunOptions(cache=args.cache, model=args.model, seed=args.seed, workers=max(1, args.workers))
        out = dispatch(args.command, cfg, opts)
    except (ConfigError, CacheIntegrityError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC

    result = out["result"]
    print(result.get("text") or result["summary"])
    if args.command == "sample":
        for i, n in enumerate(result["counts"]):
            print(f"line {i}: N={n}")
    logger.debug("trace: %s", json.dumps(out["agent_trace"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
