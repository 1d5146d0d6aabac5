"""Command-line interface: ``eulerci run|verify|sweep|report``.

Exit codes: 0 success, 1 property/sweep failure, 2 invalid input (config
schema, unknown suite or check, empty range), 3 fatal numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, config_hash, load, seed_from_hash
from .run import MANIFEST_NAME, RunFailed, execute
from .report import render_report
from .suites import SUITES, run_suite
from .sweeps import CHECKS, SweepError, parse_range, run_sweep

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("eulerci")


def _cmd_run(args) -> int:
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.grid is not None and cfg.stages > 0:
        cfg.grids = [args.grid] * cfg.stages
        cfg.raw["grids"] = cfg.grids
        cfg.raw.pop("grid", None)
    out = Path(args.out or cfg.raw.get("output") or "eulerci-run")
    try:
        manifest = execute(cfg, out)
    except RunFailed as exc:
        print(f"fatal numerical error: {exc}", file=sys.stderr)
        print(out / MANIFEST_NAME)
        return EXIT_NUMERIC
    print(out / MANIFEST_NAME)
    return EXIT_OK if manifest.status == "ok" else EXIT_NUMERIC


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    if args.config:
        try:
            return load(args.config).seed
        except ConfigError:
            pass
    return seed_from_hash(config_hash({"suite": getattr(args, "suite", None)}))


def _cmd_verify(args) -> int:
    if args.suite != "all" and args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from all, {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    seed = _seed(args)
    results = run_suite(args.suite, seed)
    report = {"suite": args.suite, "seed": seed, "passed": all(r.passed for r in results),
              "properties": [r.to_dict() for r in results]}
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _cmd_sweep(args) -> int:
    try:
        values = parse_range(args.range, args.check) if args.check in CHECKS else []
        res = run_sweep(args.check, values, grid=args.grid, seed=args.seed or 0, m=args.m)
    except SweepError as exc:
        print(f"sweep error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = res.to_csv()
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_FAIL if res.passed is False else EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.diagnostics)
    if path.is_dir():
        path = path / "diagnostics.csv"
    try:
        sys.stdout.write(render_report(path))
    except (OSError, ValueError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulerci", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a configured run")
    r.add_argument("--config", required=True, help="JSON run configuration")
    r.add_argument("--out", help="output directory (default: config 'output')")
    r.add_argument("--grid", type=int, help="override the output grid of every stage")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="run property suites and print JSON verdicts")
    v.add_argument("--suite", default="all", help=f"all or one of: {', '.join(SUITES)}")
    v.add_argument("--seed", type=int, help="seed (default: derived from --config or the suite name)")
    v.add_argument("--config", help="config whose hash seeds the suites")
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=_cmd_verify)

    s = sub.add_parser("sweep", help="decay-rate sweep written as CSV")
    s.add_argument("--check", required=True, help=f"one of: {', '.join(CHECKS)}")
    s.add_argument("--range", help="comma-separated values, fractions allowed (e.g. 1/8,1/16)")
    s.add_argument("--grid", type=int, help="grid points per axis")
    s.add_argument("--seed", type=int, help="seed for random inputs")
    s.add_argument("--m", type=int, default=1, help="stationary phase: required order m")
    s.add_argument("--out", help="also write the CSV here")
    s.set_defaults(func=_cmd_sweep)

    rp = sub.add_parser("report", help="summary table of a diagnostics CSV")
    rp.add_argument("diagnostics", help="diagnostics.csv or a run directory")
    rp.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
