"""Experiment sweeps, CSV output and trace diagnostics.

A config is a key-value text file::

    name = smoke
    graph = gnp_connected n=64 p=0.1
    graph = path n=33
    variant = single single
    variant = known multi-known noise_policy=silent
    k = 1 4
    seeds = 0..9
    constants = ring_width=2
    csv = out/smoke.csv

``graph`` and ``variant`` lines repeat. A variant line is
``<label> <pipeline> [option=value ...]``; without variants the top-level
``pipeline`` key names a single one.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .broadcast import multi_message_known, multi_message_unknown, single_message_broadcast
from .config import DEFAULT, Constants
from .engine import EngineConfig, Kind, Packet, Trace, trace_hash
from .gather import gathering_algorithm, make_plan
from .graph import FAMILIES, Graph, bfs_layering, clog2, generate_graph
from .gst import GstLabels, build_gst_distributed, validate_gst
from .primitives import decay_broadcast

SCHEMA_VERSION = 1
CSV_FIELDS = ("schema", "pipeline", "graph", "n", "D", "k", "seed", "completion_round", "success",
              "rounds", "stage_breakdown", "trace_hash")
PIPELINES = ("single", "multi-known", "multi-unknown", "gst", "gather", "decay")


class ConfigError(ValueError):
    pass


def _parse_value(text: str) -> int | float | str:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_options(tokens: Iterable[str]) -> dict[str, int | float | str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = _parse_value(v)
    return out


def _format_options(opts: Mapping[str, object]) -> str:
    return " ".join(f"{k}={v}" for k, v in opts.items())


def parse_seeds(text: str) -> list[int]:
    """``0..99`` (inclusive), ``3 5 8`` or a mix of both."""
    out = []
    for tok in text.replace(",", " ").split():
        if ".." in tok:
            a, b = tok.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return out


@dataclass(frozen=True)
class GraphPoint:
    family: str
    params: tuple[tuple[str, int | float | str], ...] = ()

    @classmethod
    def parse(cls, text: str) -> "GraphPoint":
        family, *rest = text.split() or [""]
        if family not in FAMILIES:
            raise ConfigError(f"unknown graph family {family!r}; known: {FAMILIES}")
        return cls(family, tuple(_parse_options(rest).items()))

    def label(self) -> str:
        return self.family + ("(" + ",".join(f"{k}={v}" for k, v in self.params) + ")" if self.params else "")

    def build(self, seed: int) -> Graph:
        return generate_graph(self.family, seed=seed, **dict(self.params))

    def __str__(self) -> str:
        return " ".join([self.family, _format_options(dict(self.params))]).strip()


@dataclass(frozen=True)
class Variant:
    label: str
    pipeline: str
    options: tuple[tuple[str, int | float | str], ...] = ()

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = text.split()
        if len(parts) < 2:
            raise ConfigError(f"variant needs a label and a pipeline: {text!r}")
        if parts[1] not in PIPELINES:
            raise ConfigError(f"unknown pipeline {parts[1]!r}; known: {PIPELINES}")
        return cls(parts[0], parts[1], tuple(_parse_options(parts[2:]).items()))

    def opt(self, key: str, default=None):
        return dict(self.options).get(key, default)

    def __str__(self) -> str:
        return " ".join([self.label, self.pipeline, _format_options(dict(self.options))]).strip()


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    graphs: list[GraphPoint] = field(default_factory=list)
    variants: list[Variant] = field(default_factory=list)
    ks: list[int] = field(default_factory=lambda: [1])
    seeds: list[int] = field(default_factory=list)
    constants: str = ""
    graph_seed: int | None = None       # fixed graph seed; None = the trial seed
    collision_detection: bool = True
    hash_traces: bool = False
    workers: int = 1
    csv: str = ""
    summary: str = ""
    dat: str = ""

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        pipeline = None
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected key = value: {raw!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key == "graph":
                cfg.graphs.append(GraphPoint.parse(value))
            elif key == "variant":
                cfg.variants.append(Variant.parse(value))
            elif key == "pipeline":
                pipeline = value
            elif key == "k":
                cfg.ks = [int(x) for x in value.replace(",", " ").split()]
            elif key == "seeds":
                cfg.seeds = parse_seeds(value)
            elif key == "graph_seed":
                cfg.graph_seed = None if value in ("", "trial") else int(value)
            elif key in ("collision_detection", "hash_traces"):
                setattr(cfg, key, value.lower() in ("1", "true", "yes", "on"))
            elif key == "workers":
                cfg.workers = int(value)
            elif key in ("name", "constants", "csv", "summary", "dat"):
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if pipeline is not None:
            v = Variant.parse(f"{pipeline} {pipeline}")
            cfg.variants.insert(0, v)
        DEFAULT.with_overrides(cfg.constants)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text())

    def serialize(self) -> str:
        lines = [f"name = {self.name}"]
        lines += [f"graph = {g}" for g in self.graphs]
        lines += [f"variant = {v}" for v in self.variants]
        lines.append("k = " + " ".join(map(str, self.ks)))
        lines.append("seeds = " + " ".join(map(str, self.seeds)))
        if self.constants:
            lines.append(f"constants = {self.constants}")
        if self.graph_seed is not None:
            lines.append(f"graph_seed = {self.graph_seed}")
        lines.append(f"collision_detection = {int(self.collision_detection)}")
        lines.append(f"hash_traces = {int(self.hash_traces)}")
        lines.append(f"workers = {self.workers}")
        for key in ("csv", "summary", "dat"):
            if getattr(self, key):
                lines.append(f"{key} = {getattr(self, key)}")
        return "\n".join(lines) + "\n"

    def consts(self) -> Constants:
        return DEFAULT.with_overrides(self.constants)


# -- trials --------------------------------------------------------------------------------


def messages_for(seed: int, k: int, bits: int = 32) -> list[int]:
    rng = random.Random(f"messages/{seed}")
    return [rng.getrandbits(bits) for _ in range(k)]


def decay_budget(g: Graph, source: int, consts: Constants) -> int:
    """Rounds granted to Decay broadcasts in the ablation: ``3 log n (D + c log n)``."""
    L = clog2(g.n)
    return 3 * L * (bfs_layering(g, source).diameter_bound + consts.decay_whp_factor * L)


def run_trial(variant: Variant, point: GraphPoint, k: int, seed: int, *, consts: Constants = DEFAULT,
              graph_seed: int | None = None, cd: bool = True, hash_traces: bool = False) -> dict[str, object]:
    """One CSV row; failures become rows with ``success = 0``."""
    row: dict[str, object] = {"schema": SCHEMA_VERSION, "pipeline": variant.label, "graph": point.label(),
                              "n": "-", "D": "-", "k": k, "seed": seed, "completion_round": "-",
                              "success": 0, "rounds": "-", "stage_breakdown": "-", "trace_hash": "-"}
    try:
        g = point.build(seed if graph_seed is None else graph_seed)
        source = int(variant.opt("source", 0))
        row["n"] = g.n
        row["D"] = bfs_layering(g, source).diameter_bound
        cfg = EngineConfig(collision_detection=cd, seed=seed, max_rounds=10**9)
        trace = None
        pipe = variant.pipeline
        if pipe == "single":
            r = single_message_broadcast(g, source, messages_for(seed, 1)[0], cfg, consts,
                                         setup=variant.opt("setup", "distributed"),
                                         noise_policy=variant.opt("noise_policy", "noise"))
            ok, done, rounds, stages = r.success, r.completion_round, r.rounds, r.stage_summary()
            trace = r.trace if hash_traces else None
        elif pipe == "multi-unknown":
            r = multi_message_unknown(g, source, messages_for(seed, k), cfg, consts,
                                      mode=variant.opt("mode", "full"), setup=variant.opt("setup", "distributed"),
                                      noise_policy=variant.opt("noise_policy", "noise"))
            ok, done, rounds, stages = r.success, r.completion_round, r.rounds, r.stage_summary()
            trace = r.trace if hash_traces else None
        elif pipe == "multi-known":
            r = multi_message_known(g, source, messages_for(seed, k), cfg, consts,
                                    noise_policy=variant.opt("noise_policy", "noise"),
                                    slow_index=variant.opt("slow_index", "vdist"))
            ok, done, rounds, stages = r.success, r.completion_round, r.rounds, r.stage_summary()
            trace = r.trace if hash_traces else None
        elif pipe == "gst":
            build, tr = build_gst_distributed(g, source, cfg, consts, with_vdist=True)
            ok = build.ok and validate_gst(g, build.labels).ok
            done = rounds = build.rounds
            stages = f"failures={len(build.failures)}"
            trace = (lambda: tr) if hash_traces else None
        elif pipe == "gather":
            rng = random.Random(f"origins/{seed}")
            plan = make_plan(g, [rng.randrange(g.n) for _ in range(k)], c=int(variant.opt("c", consts.gather_c)),
                             seed=seed, root=source)
            r = gathering_algorithm(g, plan, cfg)
            ok, done, rounds = r.all_received(k), r.completion_round, r.last_round
            stages = f"cap={plan.round_cap()};suppressed={len(r.suppressed)}"
            trace = r.trace if hash_traces else None
        elif pipe == "decay":
            budget = variant.opt("budget", "whp")
            budget = decay_budget(g, source, consts) if budget == "whp" else int(budget)
            r = decay_broadcast(g, source, messages_for(seed, 1)[0],
                                EngineConfig(collision_detection=cd, seed=seed, max_rounds=budget),
                                variant.opt("mode", "mmv"), inject_noise=bool(variant.opt("inject_noise", 0)))
            ok, done = r.completed, r.completion_round
            rounds = r.trace.rounds
            stages = f"budget={budget}"
            trace = (lambda: r.trace) if hash_traces else None
        else:
            raise ConfigError(f"unknown pipeline {pipe!r}")
        row.update(success=int(bool(ok)), completion_round="-" if done is None else done, rounds=rounds,
                   stage_breakdown=stages or "-")
        if trace is not None:
            row["trace_hash"] = trace_hash(trace())
    except Exception as exc:  # a failed trial is a row, never an aborted sweep
        row["stage_breakdown"] = f"error={type(exc).__name__}:{exc}".replace(",", ";")[:200]
    return row


# -- sweeps ------------------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    rows: list[dict[str, object]]
    csv_text: str
    summary_text: str
    dat_text: str


def rows_to_csv(rows: Iterable[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def quantiles(values: list[float], qs=(0.1, 0.5, 0.9)) -> list[float]:
    if not values:
        return [float("nan")] * len(qs)
    return [float(np.quantile(np.asarray(values, dtype=float), q)) for q in qs]


def fit_line(xs: list[float], ys: list[float]) -> tuple[float, float] | None:
    """Least-squares ``y = slope * x + intercept``; ``None`` below two distinct x values."""
    if len(set(xs)) < 2:
        return None
    slope, intercept = np.polyfit(np.asarray(xs, float), np.asarray(ys, float), 1)
    return float(slope), float(intercept)


def summarize(rows: Iterable[Mapping[str, object]]) -> tuple[str, str]:
    """Summary text and gnuplot data, both computed from the raw rows alone."""
    groups: dict[tuple[str, str, int], list[Mapping[str, object]]] = {}
    for r in rows:
        groups.setdefault((str(r["pipeline"]), str(r["graph"]), int(r["k"])), []).append(r)
    out = [f"# summary schema {SCHEMA_VERSION}",
           "pipeline graph k trials success_rate q10 median q90"]
    dat: dict[str, list[str]] = {}
    points: dict[str, list[tuple[float, int, float]]] = {}
    for (pipe, graph, k), rs in sorted(groups.items()):
        succ = [r for r in rs if int(r["success"])]
        comp = [float(r["completion_round"]) for r in succ if str(r["completion_round"]) != "-"]
        q10, q50, q90 = quantiles(comp)
        rate = len(succ) / len(rs)
        out.append(f"{pipe} {graph} {k} {len(rs)} {rate:.4f} {q10:.1f} {q50:.1f} {q90:.1f}")
        ds = [float(r["D"]) for r in rs if str(r["D"]) != "-"]
        D = statistics.mean(ds) if ds else float("nan")
        dat.setdefault(pipe, []).append(f"{D:.3f} {k} {q50:.1f} {q10:.1f} {q90:.1f} {rate:.4f} {graph}")
        for r in succ:
            if str(r["completion_round"]) != "-":
                points.setdefault(pipe, []).append((float(r["D"]), k, float(r["completion_round"])))
    out.append("")
    out.append("# fits: rounds = slope * x + intercept")
    for pipe, pts in sorted(points.items()):
        for k in sorted({p[1] for p in pts}):
            sel = [p for p in pts if p[1] == k]
            fit = fit_line([p[0] for p in sel], [p[2] for p in sel])
            if fit:
                out.append(f"{pipe} vs_D k={k} slope={fit[0]:.4f} intercept={fit[1]:.2f}")
        for D in sorted({p[0] for p in pts}):
            sel = [p for p in pts if p[0] == D]
            fit = fit_line([p[1] for p in sel], [p[2] for p in sel])
            if fit:
                out.append(f"{pipe} vs_k D={D:g} slope={fit[0]:.4f} intercept={fit[1]:.2f}")
    blocks = []
    for pipe, lines in sorted(dat.items()):
        blocks.append(f"# {pipe}\n# D k median q10 q90 success graph\n" + "\n".join(lines))
    return "\n".join(out) + "\n", "\n\n\n".join(blocks) + ("\n" if blocks else "")


def run_experiment(cfg: ExperimentConfig, *, write: bool = True) -> ExperimentResult:
    """Every (graph point, variant, k, seed) trial, merged in that order."""
    consts = cfg.consts()
    jobs = [(gi, vi, k, s) for gi in range(len(cfg.graphs)) for vi in range(len(cfg.variants))
            for k in cfg.ks for s in cfg.seeds]

    def one(job):
        gi, vi, k, s = job
        return run_trial(cfg.variants[vi], cfg.graphs[gi], k, s, consts=consts, graph_seed=cfg.graph_seed,
                         cd=cfg.collision_detection, hash_traces=cfg.hash_traces)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(j) for j in jobs]
    csv_text = rows_to_csv(rows)
    summary_text, dat_text = summarize(rows)
    if write:
        for path, text in ((cfg.csv, csv_text), (cfg.summary, summary_text), (cfg.dat, dat_text)):
            if path:
                Path(path).parent.mkdir(parents=True, exist_ok=True)
                Path(path).write_text(text)
    return ExperimentResult(rows, csv_text, summary_text, dat_text)


ABLATION_CONFIG = """\
# Noise tolerance of the schedules. Decay variants run under the same
# 3 log n (D + 4 log n) round budget; multi-known variants compare noisy
# and silent uninformed nodes and the level-indexed slow schedule.
name = mmv-ablation
graph = caterpillar spine=10 legs=24
variant = mmv-noise decay mode=mmv budget=whp
variant = naive-noise decay mode=standard inject_noise=1 budget=whp
variant = naive-silent decay mode=standard budget=whp
variant = known-noise multi-known noise_policy=noise slow_index=vdist
variant = known-silent multi-known noise_policy=silent slow_index=vdist
variant = known-level multi-known noise_policy=noise slow_index=level
k = 1
seeds = 0..99
graph_seed = 1
csv = results/ablation.csv
summary = results/ablation.summary.txt
dat = results/ablation.dat
"""


def ablation_config() -> ExperimentConfig:
    return ExperimentConfig.parse(ABLATION_CONFIG)


# -- potential diagnostic -------------------------------------------------------------------


@dataclass
class PotentialSeries:
    target: int
    end_round: int
    points: list[tuple[int, int, int]]    # (backwards time, potential, |S_t|) at every change

    def values(self) -> list[int]:
        return [p[1] for p in self.points]

    def nonincreasing(self) -> bool:
        vals = self.values()
        return all(a >= b for a, b in zip(vals, vals[1:]))

    @property
    def initial(self) -> int:
        return self.points[0][1]

    @property
    def final(self) -> int:
        return self.points[-1][1]


def _counts_for(pkt: Packet, mu: int | None) -> bool:
    if mu is None:
        return True
    return pkt.kind is Kind.CODED and bin(pkt.coeffs & mu).count("1") % 2 == 1


def potential_trace(trace: Trace, labels: GstLabels, target: int, *, mu: int | None = None) -> PotentialSeries:
    """Backwards transmission-connectivity from ``target`` and its potential.

    ``S_t`` holds the nodes with a chain of successful receptions, in
    increasing rounds within the last ``t`` rounds, ending at ``target``.
    The potential is the minimum of ``vdist * log n + level`` over ``S_t``.
    With ``mu`` only coded receptions whose coefficients are not orthogonal
    to ``mu`` count.
    """
    if not 0 <= target < trace.n:
        raise KeyError(f"target {target} absent from the trace")
    if target not in labels.level:
        raise KeyError(f"target {target} is not labeled")
    L = clog2(trace.n)
    vd = labels.vdist if labels.vdist is not None else labels.level

    def phi(v: int) -> int:
        return vd[v] * L + labels.level[v]

    by_round: dict[int, list[tuple[int, int]]] = {}
    for rnd, v, sent, out in trace.records:
        if sent is None and isinstance(out, Packet) and _counts_for(out, mu):
            by_round.setdefault(rnd, []).append((out.src, v))
    end = trace.rounds
    reach = {target}
    best = phi(target)
    points = [(0, best, 1)]
    for rnd in sorted(by_round, reverse=True):
        fresh = {src for src, dst in by_round[rnd] if dst in reach and src not in reach}
        if not fresh:
            continue
        reach |= fresh
        labeled = [phi(u) for u in fresh if u in labels.level]
        if labeled:
            best = min(best, min(labeled))
        points.append((end - rnd, best, len(reach)))
    return PotentialSeries(target, end, points)


def reachability_sizes(trace: Trace, target: int) -> list[tuple[int, int]]:
    """(backwards time, |S_t|) without labels."""
    if not 0 <= target < trace.n:
        raise KeyError(f"target {target} absent from the trace")
    by_round: dict[int, list[tuple[int, int]]] = {}
    for rnd, v, sent, out in trace.records:
        if sent is None and isinstance(out, Packet):
            by_round.setdefault(rnd, []).append((out.src, v))
    reach = {target}
    pts = [(0, 1)]
    for rnd in sorted(by_round, reverse=True):
        fresh = {s for s, d in by_round[rnd] if d in reach and s not in reach}
        if fresh:
            reach |= fresh
            pts.append((trace.rounds - rnd, len(reach)))
    return pts
