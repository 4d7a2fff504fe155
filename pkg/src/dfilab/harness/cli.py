"""``dfi-lab <command> --config <path> [--out <dir>] [--seed <n>]``.

Exit status is 0 on success. On failure a single JSON line describing the
error is written to stderr and the status is nonzero: 2 for configuration
errors, 3 for missing upstream artifacts, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError
from .pipeline import COMMANDS, OUT_ENV, DependencyError, run

EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_FAILURE = 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfi-lab", description="DFI toy experiments: train, evaluate, sweep, plot.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="path to a TOML experiment config")
    p.add_argument("--out", default=None, help=f"output root (overrides ${OUT_ENV} and the config's out_dir)")
    p.add_argument("--seed", type=int, default=None, help="run this single seed instead of the config's list")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error_line(kind: str, exc: Exception, **extra) -> str:
    payload = {"error": kind, "message": str(exc)}
    payload.update({k: v for k, v in extra.items() if v is not None})
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        paths = run(args.config, args.command, out=args.out, seed=args.seed)
    except ConfigError as exc:
        print(_error_line("config", exc, key=exc.key, line=exc.line), file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(_error_line("dependency", exc, path=str(exc.path) if exc.path else None), file=sys.stderr)
        return EXIT_DEPENDENCY
    except Exception as exc:  # surfaced as a parsable line rather than a traceback
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return EXIT_FAILURE
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
