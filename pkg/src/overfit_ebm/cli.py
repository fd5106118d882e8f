"""Command-line entry point: ``run``, ``validate`` and ``summarize``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import glob
import sys

from .config import ConfigError, validate_config
from .experiments import RunError, emit_summary, plan_runs, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="overfit-ebm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        sp.add_argument("--out-dir", help="override experiment.out_dir")

    r = sub.add_parser("run", help="validate a config and execute every run")
    common(r)
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    v = sub.add_parser("validate", help="check a config and print the resolved values")
    common(v)
    s = sub.add_parser("summarize", help="roll per-run summary.csv files into one table")
    s.add_argument("pattern", help="glob for summary.csv files (quote it)")
    s.add_argument("-o", "--output", default="summary_all.csv")
    return p


def _load(args):
    cfg = validate_config(args.config)
    return cfg.with_overrides(**{"experiment.seed": args.seed,
                                 "experiment.out_dir": args.out_dir})


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "summarize":
        paths = glob.glob(args.pattern, recursive=True)
        try:
            n = emit_summary(paths, args.output)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"wrote {n} rows to {args.output}")
        return 0

    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        for line in cfg.manifest_lines():
            print(line)
        print(f"# {len(plan_runs(cfg))} runs planned")
        return 0

    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        dirs = run_experiment(cfg, jobs=args.jobs)
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    for d in dirs:
        print(d)
    return 0


if __name__ == "__main__":
    sys.exit(main())
