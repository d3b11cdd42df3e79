"""Command-line entry point: ``splitchain {security,experiment,trace}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from typing import Sequence

from . import harness, security
from .consensus import CommitmentMismatch
from .model import REFERENCE_SEED
from .netmodel import DeadlockError, LatencyConfigError, LatencyMatrix, trace_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID_PARAMS = 3
EXIT_INVALID_CONFIG = 4
EXIT_LATENCY_CONFIG = 5
EXIT_IO = 6
EXIT_SIMULATION = 7


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitchain",
        description="Attack-cost calculator and consensus/execution separation simulator.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="{security,experiment,trace}")
    sub.required = True

    sec = sub.add_parser("security", help="sweep committee sizes and report attack cost")
    sec.add_argument("--population", type=int, required=True, help="population size N")
    sec.add_argument("--byzantine", type=int, required=True, help="Byzantine node count M")
    sec.add_argument("--n-min", type=int, default=1, help="smallest committee size (default 1)")
    sec.add_argument("--n-max", type=int, default=None, help="largest committee size (default n-min)")
    sec.add_argument("--reward", type=Fraction, default=Fraction(0), help="attack reward r (default 0)")
    sec.add_argument("--slash", type=Fraction, default=Fraction(1), help="slash amount xi (default 1)")
    sec.add_argument("--format", choices=("json", "csv", "table"), default=None,
                     help="output format (default: table on a terminal, json otherwise)")

    def add_run_flags(p: argparse.ArgumentParser, allow_all: bool) -> None:
        p.add_argument("--id", choices=harness.EXPERIMENT_IDS + (("all",) if allow_all else ()),
                       default="all" if allow_all else "I", help="experiment to run")
        p.add_argument("--seed", type=int, default=None,
                       help=f"workload seed (default {REFERENCE_SEED}, sums to 7995 tx over 20 blocks)")
        p.add_argument("--blocks", type=int, default=None, help="blocks to finalize (default 20)")
        p.add_argument("--latency-config", metavar="PATH", default=None,
                       help="latency matrix INI file (default: bundled 8-region matrix)")
        p.add_argument("--parallelism", type=int, default=None,
                       help=f"execution-node parallelism (default {harness.DEFAULT_PARALLELISM})")
        p.add_argument("--config", metavar="PATH", default=None,
                       help="INI file with [run], [fleet], [per_tx_us], [latency] sections")

    exp = sub.add_parser("experiment", help="run the reference experiments")
    add_run_flags(exp, allow_all=True)
    exp.add_argument("--seeds", type=_seed_list, default=None,
                     help="comma-separated seeds to repeat the run with")
    exp.add_argument("--format", choices=("json", "csv", "table"), default=None,
                     help="output format (default: table on a terminal, json otherwise)")
    exp.add_argument("--trace", metavar="PATH", default=None,
                     help="write the event trace CSV (one file per experiment)")

    tr = sub.add_parser("trace", help="emit the event, round or receipt trace of one run")
    add_run_flags(tr, allow_all=False)
    tr.add_argument("--kind", choices=("events", "rounds", "receipts"), default="events")
    tr.add_argument("--format", choices=("json", "csv"), default="csv")

    lines = ["flags by subcommand:"]
    for name, p in (("security", sec), ("experiment", exp), ("trace", tr)):
        flags = [a.option_strings[-1] for a in p._actions if a.option_strings and a.dest != "help"]
        lines.append(f"  {name}: {' '.join(flags)}")
    parser.epilog = "\n".join(lines)
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _default_format(fmt: str | None) -> str:
    if fmt:
        return fmt
    return "table" if sys.stdout.isatty() else "json"


def _security(args) -> str:
    n_max = args.n_max if args.n_max is not None else args.n_min
    if n_max < args.n_min:
        raise security.InvalidParams("--n-max must be >= --n-min")
    rows = security.sweep(args.population, args.byzantine, args.n_min, n_max,
                          args.reward, args.slash)
    fmt = _default_format(args.format)
    if fmt == "json":
        return json.dumps({"population": args.population, "byzantine": args.byzantine,
                           "reward": str(args.reward), "slash": str(args.slash),
                           "rows": rows}, indent=2) + "\n"
    cols = ("n", "p_all_byzantine", "min_reward_ratio", "attack_viable")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if r[c] is not None else "" for c in cols])
        return buf.getvalue()
    out = [f"{'n':>4}  {'P(all byzantine)':>16}  {'min r/xi':>16}  viable"]
    for r in rows:
        ratio = "impossible" if r["attack_impossible"] else f"{r['min_reward_ratio']:.6g}"
        out.append(f"{r['n']:>4}  {r['p_all_byzantine']:>16.6e}  {ratio:>16}  {r['attack_viable']}")
    return "\n".join(out) + "\n"


def _configs(args) -> list[harness.ExperimentConfig]:
    settings = harness.load_config_file(args.config) if args.config else {}
    counts = settings.pop("counts", None)
    for key in ("seed", "blocks", "parallelism"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    if args.latency_config:
        settings["matrix"] = LatencyMatrix.from_file(args.latency_config)
    ids = harness.EXPERIMENT_IDS if args.id == "all" else (args.id,)
    return [harness.build_experiment(i, counts, **settings) for i in ids]


def _experiment(args) -> str:
    configs = _configs(args)
    seeds = args.seeds or [None]
    fmt = _default_format(args.format)
    docs = []
    for seed in seeds:
        runs = []
        for cfg in configs:
            if seed is not None:
                cfg = harness.with_overrides(cfg, seed=seed)
            runs.append(harness.run(cfg, record_trace=bool(args.trace)))
        if args.trace:
            paths = harness.trace_paths(args.trace, [r.experiment for r in runs])
            for m in runs:
                path = paths[m.experiment]
                if seed is not None and len(seeds) > 1:
                    path = path.with_name(f"{path.stem}.seed{seed}{path.suffix}")
                path.write_text(trace_csv(m.network.trace))
        docs.append(harness.report(runs, fmt))
    return "".join(docs)


def _trace(args) -> str:
    (cfg,) = _configs(args)
    metrics = harness.run(cfg, record_trace=args.kind == "events")
    if args.kind == "events":
        if args.format == "csv":
            return trace_csv(metrics.network.trace)
        return json.dumps([dict(zip(("fire_at_us", "seq", "event_kind", "from", "to", "size_mb"),
                                    e.trace_row())) for e in metrics.network.trace]) + "\n"
    if args.kind == "rounds":
        rows = metrics.rounds
    else:
        rows = [{"height": r.height, "executor": r.executor, "completed_at_us": r.completed_at,
                 "commitment": r.result_commitment[:16]}
                for e in metrics.network.executors.values() for r in e.receipts]
    if args.format == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


_ERROR_CODES = (
    (security.InvalidParams, EXIT_INVALID_PARAMS),
    (harness.InvalidOverride, EXIT_INVALID_CONFIG),
    (LatencyConfigError, EXIT_LATENCY_CONFIG),
    (OSError, EXIT_IO),
    (DeadlockError, EXIT_SIMULATION),
    (CommitmentMismatch, EXIT_SIMULATION),
)


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    handlers = {"security": _security, "experiment": _experiment, "trace": _trace}
    try:
        out = handlers[args.subcommand](args)
    except tuple(cls for cls, _ in _ERROR_CODES) as exc:
        code = next(c for cls, c in _ERROR_CODES if isinstance(exc, cls))
        print(f"splitchain: error: {exc}", file=sys.stderr)
        return code
    sys.stdout.write(out)
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
