"""Command-line entry point: ``unconfound <subcommand> --config FILE [options]``.

Exit codes: 0 success, 2 configuration or validation error, 3 data
ingestion or selection-rule error, 4 test-execution error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    IngestionError,
    RuleError,
    TestExecutionError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_TEST = 4

log = logging.getLogger("unconfound")

_HELP = {
    "type1": "empirical Type I error of the bootstrap test under a null scenario",
    "power-sweep": "empirical bootstrap power over a parameter grid",
    "analytic-power": "closed-form z-test power over a parameter grid",
    "test-pair": "bootstrap and z tests on an RCT CSV and an observational CSV",
    "semisynth": "induce confounding in a randomized CSV and test with the confounder observed and hidden",
}


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on its own, which matches EXIT_CONFIG, but
    # raising keeps main() callable from tests without SystemExit handling.
    def error(self, message):
        raise _ArgumentError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unconfound", description="Test unconfoundedness by comparing RCT and observational effect estimates.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in experiments.KINDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        p.add_argument("--config", required=True, type=Path, help="YAML experiment configuration")
        p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--jobs", type=_positive, default=1, help="worker processes for replicates")
        p.add_argument("--preset", choices=sorted(experiments.PRESETS), default=None,
                       help="override replicates and B with a named scale")
    return parser


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = experiments.load_config(args.config, kind=args.command, seed=args.seed, preset=args.preset)
        table = experiments.run(cfg, jobs=args.jobs)
        text = table.to_json() if args.format == "json" else table.to_csv()
        _write(text, args.out)
    except (IngestionError, RuleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TestExecutionError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TEST
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
