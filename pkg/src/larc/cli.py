"""Command-line entry point.

    larc run --config cfg.json [--out DIR] [--invariants enforce|record|off]
    larc compare --configs a.json b.json ... [--seed N] [--out DIR] [--jobs N]
    larc replay --state state.json --holdout holdout.jsonl [--out FILE]
    larc make-series --out series.csv [--hours N] [--seed N]

Exit codes: 0 success, 1 usage/config/I-O error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .invariants import InvariantViolation
from .kernels import KernelError
from .runner import RunConfig, compare, comparison_table, replay, run
from .stream import StreamError, elec2_like_series, write_series_csv
from .threshold_model import ConfigError, ModelError

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="larc", description="Online risk-control calibration runs (ARC, Mondrian ARC, L-ARC)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one calibration experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir in the config)")
    r.add_argument("--invariants", choices=("enforce", "record", "off"))

    c = sub.add_parser("compare", help="run several configs on one shared stream")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--seed", type=int, help="shared stream seed")
    c.add_argument("--out", help="directory for comparison.csv / comparison.json")
    c.add_argument("--jobs", type=int, default=1)

    rp = sub.add_parser("replay", help="re-evaluate a saved state on a hold-out dump")
    rp.add_argument("--state", required=True)
    rp.add_argument("--holdout", required=True)
    rp.add_argument("--out", help="write the evaluation JSON here instead of stdout")

    m = sub.add_parser("make-series", help="write a synthetic seasonal demand series as t,y CSV")
    m.add_argument("--out", required=True)
    m.add_argument("--hours", type=int, default=45312)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--start-weekday", type=int, default=0)
    return p


def _cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.out:
        cfg.output_dir = str(Path(args.out).resolve())
    if args.invariants:
        cfg.invariant_mode = args.invariants
    if not cfg.output_dir:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    res = run(cfg)
    print(json.dumps({k: res.summary[k] for k in ("label", "steps", "final_risk", "final_bound", "holdout_risk")}))
    print(f"artifacts: {res.output_dir}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    configs = [RunConfig.load(p) for p in args.configs]
    rows = compare(configs, shared_stream_seed=args.seed, jobs=args.jobs)
    table = comparison_table(rows)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(table)
        (out / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def _cmd_replay(args) -> int:
    report = replay(args.state, args.holdout)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_make_series(args) -> int:
    y = elec2_like_series(args.hours, args.seed, args.start_weekday)
    write_series_csv(args.out, y)
    print(f"wrote {len(y)} rows to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "replay": _cmd_replay,
                "make-series": _cmd_make_series}
    try:
        return handlers[args.command](args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, StreamError, KernelError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
