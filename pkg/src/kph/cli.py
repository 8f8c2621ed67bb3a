"""``kph`` command line: run scenarios and list them.

Exit codes: 0 when every check passes, 1 on a failed check, 2 on a
configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .harness import SCENARIOS, RunConfig, run_batch


def build_parser():
    parser = argparse.ArgumentParser(prog="kph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario (or 'all')")
    run.add_argument("scenario", help="scenario name, or 'all'")
    run.add_argument("--config", help="JSON run configuration")
    run.add_argument("--out", help="output directory for CSV files")
    run.add_argument("--seed", type=int, help="override the sampling seed")
    sub.add_parser("list-scenarios", help="print available scenario names")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for name in SCENARIOS:
            print(name)
        return 0
    try:
        cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
        if args.out:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        names = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
        reports = run_batch(names, cfg)
    except (ConfigError, OSError) as e:
        print(f"kph: error: {e}", file=sys.stderr)
        return 2
    doc = [r.to_dict() for r in reports.values()]
    json.dump(doc[0] if len(doc) == 1 else doc, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0 if all(r.passed for r in reports.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
