"""Command line entry point: ``radiobc <command> ...``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import DEFAULT
from .engine import parse_trace
from .graph import parse_graph
from .gst import parse_labels, validate_gst
from .harness import ABLATION_CONFIG, ConfigError, ExperimentConfig, potential_trace, reachability_sizes, run_experiment


def _default_seed() -> int | None:
    raw = os.environ.get("RADIOBC_SEED")
    return int(raw) if raw not in (None, "") else None


def _merge_constants(base: str, extra: str | None) -> str:
    parts = [p for p in (base, extra) if p]
    return ",".join(parts)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    elif not cfg.seeds:
        env = _default_seed()
        cfg.seeds = [0 if env is None else env]
    cfg.constants = _merge_constants(cfg.constants, args.constants)
    DEFAULT.with_overrides(cfg.constants)
    if args.workers:
        cfg.workers = args.workers
    res = run_experiment(cfg)
    if not cfg.csv:
        sys.stdout.write(res.csv_text)
    sys.stdout.write(res.summary_text)
    return 0


def cmd_validate_gst(args: argparse.Namespace) -> int:
    g = parse_graph(Path(args.graph).read_text())
    labels = parse_labels(Path(args.labels).read_text())
    report = validate_gst(g, labels)
    for v in report.violations:
        print(f"{v.clause}: nodes {list(v.nodes)}: {v.detail}")
    print("valid" if report.ok else f"invalid ({len(report.violations)} violations)")
    return 0 if report.ok else 1


def cmd_diagnose(args: argparse.Namespace) -> int:
    trace = parse_trace(Path(args.trace).read_text())
    if args.labels:
        labels = parse_labels(Path(args.labels).read_text())
        mu = int(args.mu, 0) if args.mu else None
        series = potential_trace(trace, labels, args.target, mu=mu)
        print("# t potential reach")
        for t, phi, size in series.points:
            print(t, phi, size)
        print(f"# nonincreasing={series.nonincreasing()} initial={series.initial} final={series.final}")
    else:
        print("# t reach  (pass --labels for the potential)")
        for t, size in reachability_sizes(trace, args.target):
            print(t, size)
    return 0


def cmd_ablation(args: argparse.Namespace) -> int:
    sys.stdout.write(ABLATION_CONFIG)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radiobc", description="Radio network broadcast simulator")
    p.add_argument("--seed", type=int, default=None, help="seed (default: $RADIOBC_SEED)")
    p.add_argument("--constants", default=None, help="constant overrides, key=value,key=value")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=0)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate-gst", help="check GST labels against a graph")
    v.add_argument("--graph", required=True)
    v.add_argument("--labels", required=True)
    v.set_defaults(func=cmd_validate_gst)

    d = sub.add_parser("diagnose-potential", help="backwards reachability and potential of a trace")
    d.add_argument("--trace", required=True)
    d.add_argument("--target", type=int, required=True)
    d.add_argument("--labels", default=None)
    d.add_argument("--mu", default=None, help="restrict to receptions not orthogonal to this vector")
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("ablation", help="print the canned noise ablation config")
    a.set_defaults(func=cmd_ablation)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"radiobc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
