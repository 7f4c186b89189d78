"""``exfil-lab`` command line: one verb per pipeline stage."""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ExfilLabError, ParseError
from .harness import COMMANDS

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4, 5


def build_parser():
    parser = argparse.ArgumentParser(prog="exfil-lab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    for verb, fn in COMMANDS.items():
        p = sub.add_parser(verb, help=(fn.__doc__ or verb).strip().splitlines()[0])
        p.add_argument("--config", metavar="PATH", help="experiment config (defaults: toy setup)")
        p.add_argument("--seed", type=int, metavar="N", help="run a single seed, overriding the config list")
        p.add_argument("--out", metavar="DIR", help="run directory, overriding the config")
        p.add_argument("--quiet", action="store_true", help="do not print the report aggregate")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        report = COMMANDS[args.verb](cfg)
    except ExfilLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        json.dump(report["aggregate"], sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
