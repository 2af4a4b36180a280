"""Command-line entry point: ``ripening <subcommand> --config run.yaml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .exceptions import RipeningError

log = logging.getLogger("ripening")

_RUNNERS = {
    "simulate": harness.run_particles,
    "pde": harness.run_pde,
    "field-survey": harness.run_field_survey,
    "compare": harness.run_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ripening", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate the particle system",
        "pde": "solve the limiting transport equation",
        "field-survey": "survey the monopole field over the sweep deltas",
        "sweep": "particle/PDE convergence sweep over deltas and seeds",
        "compare": "particle run against the matched PDE run",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="seed for the initial radii")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
        p.add_argument("--diagnostics-only", action="store_true",
                       help="permit alpha <= 3/2 + epsilon for regime-boundary runs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _jsonable(summary):
    return json.loads(json.dumps(summary, default=str))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = harness.load_config(args.config, out=args.out, seed=args.seed,
                                     diagnostics_only=args.diagnostics_only)
        if args.seed is not None and args.seed < 0:
            raise harness.ConfigError("must be nonnegative", field="seed")
        if args.command == "sweep":
            result = harness.run_convergence_sweep(config, workers=max(1, args.workers))
        else:
            result = _RUNNERS[args.command](config)
    except RipeningError as exc:
        code = harness.exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    summary = _jsonable({k: v for k, v in result.summary.items() if k != "rows"})
    print(json.dumps({"status": result.status, **summary}, sort_keys=True))
    for f in result.files:
        log.info("wrote %s", f)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
