"""Command line entry point ``dualpop``.

Exit codes: 0 success, 2 configuration error, 3 overflowing or
non-converged results present, 4 internal-consistency fault.
"""
from __future__ import annotations

import argparse
import json
import sys

from .dual import InternalConsistencyError
from .experiments import KINDS, ConfigError, config_from_dict, run_config
from .model import InvalidParamsError

EXIT_OK, EXIT_CONFIG, EXIT_OVERFLOW, EXIT_INTERNAL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualpop",
                                 description="Two-level population experiments.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--replicates", type=int, help="replicate count (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads")
    ap.add_argument("--gnuplot", action="store_true", help="also write whitespace .dat files")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except OSError as e:
            raise ConfigError([f"cannot read {args.config}: {e}"]) from e
        except json.JSONDecodeError as e:
            raise ConfigError([f"{args.config} is not valid JSON: {e}"]) from e
        if not isinstance(d, dict):
            raise ConfigError(["configuration must be a JSON object"])
        if d.setdefault("kind", args.kind) != args.kind:
            raise ConfigError([f"config kind {d['kind']!r} does not match command {args.kind!r}"])
        if args.seed is not None:
            d["seed"] = args.seed
        if args.replicates is not None:
            d["replicates"] = args.replicates
        if args.threads is not None:
            d["threads"] = args.threads
        cfg = config_from_dict(d)
        report = run_config(cfg, out_dir=args.out, gnuplot=args.gnuplot)
    except (ConfigError, InvalidParamsError) as e:
        print("configuration error:", file=sys.stderr)
        for msg in e.errors:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except InternalConsistencyError as e:
        print(f"internal consistency fault: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    for p in report.paths:
        print(p)
    if report.flagged:
        print("warning: overflowing, non-converged or non-absorbed results present",
              file=sys.stderr)
        return EXIT_OVERFLOW
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
