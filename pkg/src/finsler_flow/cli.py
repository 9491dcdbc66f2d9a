"""Command-line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from .config import BUNDLED, resolve
from .errors import ConfigurationError
from .pipeline import run_scenario
from .report import check_output_dir

COMMANDS = {
    "check-identities": ("identities",),
    "estimate-constants": ("constants",),
    "run-heat-flow": ("flow",),
    "verify-gradient-estimate": ("constants", "flow", "gradient"),
    "verify-harnack": ("constants", "flow", "harnack"),
    "run-all": ("constants", "identities", "flow", "gradient", "harnack"),
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsler-flow",
                                description="Heat-flow gradient and Harnack estimate checks on Finsler tori.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True,
                       help=f"YAML scenario file or bundled name ({', '.join(BUNDLED)})")
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        s.add_argument("--out", default=None, help="output directory (default: config output)")
        s.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
        s.add_argument("--refinements", type=int, default=None, help="finer ladder levels beyond the base grid")
        if name == "run-heat-flow":
            s.add_argument("--fields", action="store_true", help="also dump per-stamp fields as CSV")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve(args.config)
        if args.refinements is not None and args.refinements < 2:
            raise ConfigurationError("identities", "--refinements must be at least 2")
        out = Path(args.out or cfg.output)
        check_output_dir(out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with threadpool_limits(limits=args.threads):
        report = run_scenario(cfg, args.seed, COMMANDS[args.command], args.refinements, out)
        if args.command == "run-heat-flow" and args.fields and report.trajectory is not None:
            report.trajectory.dump_csv(out / "fields")
    for f in report.failures:
        print(f"failure in {f['phase']}: {f['type']}: {f['message']}", file=sys.stderr)
    for name, ok in report.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"{report.rollup}  {cfg.name} -> {out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
