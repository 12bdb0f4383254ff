"""Broadcast pipelines.

The unknown-topology pipelines cut the BFS layering into rings of
consecutive layers. Every ring builds its own GST forest rooted at its
inner boundary (rings of equal parity in parallel), messages cross a ring
with the MMV schedule and move to the next ring through Decay from the
outer boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .config import DEFAULT, Constants
from .engine import BudgetExhausted, Channel, EngineConfig, Kind, Lane, Packet, Trace, salt_of
from .graph import Graph, bfs_layering, clog2
from .gst import (GstLabels, build_gst_oracle, forest_length, gst_forest_on_lane, gst_oracle_forest,
                  vdist_length, vdist_on_lane, virtual_distances)
from .primitives import CollisionDetectionRequired, collision_wave, decay
from .rlnc import KnowledgeSpace, decode, encode_random
from .schedules import MmvNodeState, MmvRunner, mmv_states

SETUP_MODES = ("distributed", "oracle")
CODING_MODES = ("full", "generation")


class PipelineError(ValueError):
    pass


def pipeline_budget(depth: int, k: int, n: int, consts: Constants = DEFAULT) -> int:
    L = clog2(n)
    return consts.budget_constant * (max(1, depth) + k * L + L ** 6)


# -- rings ------------------------------------------------------------------------


def ring_width(depth: int, n: int, consts: Constants = DEFAULT) -> int:
    if consts.ring_width > 0:
        return consts.ring_width
    return max(1, -(-depth // clog2(n) ** 4))


@dataclass(frozen=True)
class RingDecomposition:
    width: int
    level: Mapping[int, int]
    rings: tuple[tuple[int, ...], ...]

    @property
    def count(self) -> int:
        return len(self.rings)

    def ring_of(self, v: int) -> int:
        return self.level[v] // self.width

    def local_level(self, v: int) -> int:
        return self.level[v] % self.width

    def inner(self, j: int) -> list[int]:
        return [v for v in self.rings[j] if self.local_level(v) == 0]

    def outer(self, j: int) -> list[int]:
        return [v for v in self.rings[j] if self.local_level(v) == self.width - 1]


def decompose_rings(level: Mapping[int, int], width: int) -> RingDecomposition:
    if width < 1:
        raise PipelineError("ring width must be positive")
    count = max(level.values()) // width + 1
    members: list[list[int]] = [[] for _ in range(count)]
    for v in sorted(level):
        members[level[v] // width].append(v)
    return RingDecomposition(width, dict(level), tuple(tuple(m) for m in members))


def ring_setup_length(width: int, L: int, consts: Constants = DEFAULT) -> int:
    return forest_length(width - 1, L, consts) + vdist_length(width - 1, L, consts)


def setup_rings(lane: Lane, g: Graph, rings: RingDecomposition, L: int, consts: Constants = DEFAULT, *,
                mode: str = "distributed") -> tuple[list[GstLabels], list[str]]:
    """GST forest plus virtual distances for every ring.

    In distributed mode rings of equal parity work in parallel on
    interleaved rounds, so the stage costs ``2 * ring_setup_length``
    rounds whatever the ring count (one ring costs just one length).
    """
    if mode not in SETUP_MODES:
        raise PipelineError(f"setup mode must be one of {SETUP_MODES}")
    labels: list[GstLabels] = []
    failures: list[str] = []
    stride = 1 if rings.count == 1 else 2
    children = []
    for j in range(rings.count):
        local = {v: rings.local_level(v) for v in rings.rings[j]}
        roots = rings.inner(j)
        if mode == "oracle":
            lab = gst_oracle_forest(g, local, roots)
            lab.vdist = virtual_distances(g, lab)
        else:
            sub = lane.sub(stride, j % stride)
            build = gst_forest_on_lane(sub, g, local, roots, L, consts, depth=rings.width - 1)
            lab = build.labels
            lab.vdist = vdist_on_lane(sub, lab, L, consts, depth=rings.width - 1)
            failures += [f"ring {j}: {f}" for f in build.failures]
            missing = [v for v in local if v not in lab.vdist]
            if missing:
                failures.append(f"ring {j}: {len(missing)} nodes without virtual distance")
                for v in missing:
                    lab.vdist[v] = 2 * L
            children.append(sub)
        labels.append(lab)
    if mode == "distributed":
        lane.idle(stride * ring_setup_length(rings.width, L, consts))
    return labels, failures


def mmv_stage_length(width: int, batch: int, L: int, consts: Constants = DEFAULT) -> int:
    return (consts.mmv_depth_factor * width + consts.mmv_message_factor * batch * L
            + consts.mmv_log_factor * L * L)


# -- results ------------------------------------------------------------------------


@dataclass
class PipelineResult:
    pipeline: str
    n: int
    depth: int
    k: int
    success: bool
    completion_round: int | None
    rounds: int
    stages: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    params: dict[str, int | str] = field(default_factory=dict)
    channel: Channel | None = None
    plan: list[tuple[int, int, int]] = field(default_factory=list)   # (epoch, ring, batch)

    def trace(self) -> Trace:
        if self.channel is None:
            raise PipelineError("result carries no channel")
        return self.channel.trace()

    def stage_summary(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.stages.items())


class _Progress:
    """Which node holds which batch, and since which round."""

    def __init__(self, n: int, batches: Sequence[Sequence[int]]):
        self.batches = [list(b) for b in batches]
        self.have: list[dict[int, list[int]]] = [{} for _ in range(n)]
        self.first: dict[tuple[int, int], int] = {}

    def give(self, v: int, b: int, msgs: list[int], rnd: int) -> None:
        if b not in self.have[v]:
            self.have[v][b] = list(msgs)
            self.first[v, b] = rnd

    def complete(self) -> bool:
        nb = len(self.batches)
        return all(len(h) == nb for h in self.have)

    def correct(self) -> bool:
        return all(h.get(b) == msgs for h in self.have for b, msgs in enumerate(self.batches))

    def completion_round(self) -> int | None:
        if not self.complete():
            return None
        return max(self.first.values(), default=0)

    def missing(self) -> list[str]:
        out = []
        for v, h in enumerate(self.have):
            lost = [b for b in range(len(self.batches)) if b not in h]
            if lost:
                out.append(f"node {v} lacks batches {lost}")
            elif any(h[b] != msgs for b, msgs in enumerate(self.batches)):
                out.append(f"node {v} decoded wrong content")
        return out


def _full_space(gid: int, msgs: Sequence[int]) -> KnowledgeSpace:
    sp = KnowledgeSpace(gid, len(msgs))
    for i, m in enumerate(msgs):
        sp.insert(1 << i, m)
    return sp


def _ring_states(labels: GstLabels, noise_policy: str) -> dict[int, MmvNodeState]:
    return mmv_states(labels, noise_policy=noise_policy, slow_index="vdist")


# -- stages --------------------------------------------------------------------------


def ring_stage_full(lane: Lane, labels: GstLabels, b: int, prog: _Progress, L: int, rounds: int, *,
                    noise_policy: str = "noise", salt: int = 0) -> None:
    """MMV schedule with RLNC over the whole batch ``b``; exactly ``rounds`` rounds."""
    msgs = prog.batches[b]
    states = _ring_states(labels, noise_policy)
    for v, s in states.items():
        s.knowledge = _full_space(b, msgs) if b in prog.have[v] else KnowledgeSpace(b, len(msgs))

    def deliver(s: MmvNodeState, pkt: Packet) -> bool:
        sp = s.knowledge
        if pkt.generation != b or pkt.width != sp.width or not sp.insert(pkt.coeffs, pkt.body):
            return False
        if sp.full:
            prog.give(s.node, b, decode(sp), lane.now)
        return True

    MmvRunner(lane, states, L, salt=salt, deliver=deliver).run(rounds)


def generation_stage_length(width: int, batch: int, L: int, consts: Constants = DEFAULT) -> int:
    gens = -(-batch // (consts.generation_factor * L))
    strips = (2 * L * L + width - 1) // (consts.strip_factor * L * L) + 1
    return (gens + strips) * consts.step_factor * L * L


def ring_stage_generation(lane: Lane, labels: GstLabels, b: int, prog: _Progress, L: int, width: int,
                          consts: Constants = DEFAULT, *, noise_policy: str = "noise", salt: int = 0) -> None:
    """MMV schedule with coding restricted to one generation and one strip.

    A node of strip ``σ`` works on generation ``step - σ``. It encodes that
    generation or the previous one (a fair coin when both are available),
    so the strip below keeps being fed. A node that has not decoded its
    generation by the end of a step empties its buffer. Uses exactly
    ``generation_stage_length(width, batch)`` rounds.
    """
    msgs = prog.batches[b]
    size = consts.generation_factor * L
    chunks = [msgs[i:i + size] for i in range(0, len(msgs), size)]
    G = len(chunks)
    W = consts.strip_factor * L * L
    step_len = consts.step_factor * L * L
    states = _ring_states(labels, noise_policy)
    strip = {v: (labels.vdist[v] * L + labels.level[v]) // W for v in states}
    gid = [((b + 1) << 12) | c for c in range(G)]
    spaces = {v: [KnowledgeSpace(gid[c], len(chunks[c])) for c in range(G)] for v in states}
    done: dict[int, set[int]] = {v: set() for v in states}
    for v in states:
        if b in prog.have[v]:
            spaces[v] = [_full_space(gid[c], chunks[c]) for c in range(G)]
            done[v] = set(range(G))
    step = 0

    def space_of(s: MmvNodeState) -> KnowledgeSpace | None:
        v = s.node
        cur = step - strip[v]
        cands = [c for c in (cur, cur - 1) if 0 <= c < G and spaces[v][c].rank]
        if not cands:
            return None
        if len(cands) == 2 and lane.rng(v).coin(lane.at(lane.clock + 1), 1, salt + 7):
            return spaces[v][cands[1]]
        return spaces[v][cands[0]]

    def deliver(s: MmvNodeState, pkt: Packet) -> bool:
        v = s.node
        cur = step - strip[v]
        if not 0 <= cur < G or pkt.generation != gid[cur] or cur in done[v]:
            return False
        sp = spaces[v][cur]
        if not sp.insert(pkt.coeffs, pkt.body):
            return False
        if sp.full:
            done[v].add(cur)
            if len(done[v]) == G:
                prog.give(v, b, [m for c in range(G) for m in decode(spaces[v][c])], lane.now)
        return True

    runner = MmvRunner(lane, states, L, salt=salt, space_of=space_of, deliver=deliver)
    total = generation_stage_length(width, len(msgs), L, consts)
    for step in range(total // step_len):
        runner.run(step_len)
        for v in states:
            cur = step - strip[v]
            if 0 <= cur < G and cur not in done[v]:
                spaces[v][cur].clear()


def fec_length(batch: int, L: int, consts: Constants = DEFAULT) -> int:
    return consts.fec_phase_factor * max(batch, L) * L


def fec_transfer(lane: Lane, outer: Iterable[int], inner: Iterable[int], b: int, prog: _Progress, L: int,
                 consts: Constants = DEFAULT, *, salt: int = 0) -> None:
    """Move batch ``b`` across a ring boundary; exactly :func:`fec_length` rounds.

    Outer-boundary holders keep sending fresh random combinations of the
    batch in Decay phases, and an inner-boundary node decodes once it
    has collected enough independent ones.
    """
    msgs = prog.batches[b]
    k = len(msgs)
    senders = [v for v in outer if b in prog.have[v]]
    src = {v: _full_space(b, msgs) for v in senders}
    recv = {v: KnowledgeSpace(b, k) for v in inner if b not in prog.have[v]}

    def fresh(v: int, rnd: int) -> Packet:
        return encode_random(src[v], lane.rng(v), rnd, salt + 1)

    def heard(h):
        for v, o in h.items():
            sp = recv[v]
            if isinstance(o, Packet) and o.kind is Kind.CODED and not sp.full:
                if sp.insert(o.coeffs, o.body) and sp.full:
                    prog.give(v, b, decode(sp), lane.now)

    decay(lane, senders, None, consts.fec_phase_factor * max(k, L), L, listeners=set(recv),
          salt=salt, on_heard=heard, fresh=fresh)


@dataclass
class TransferResult:
    decoded: dict[int, int]      # inner node -> round it decoded the batch
    rounds: int
    trace: Trace

    def all_decoded(self, inner: Iterable[int]) -> bool:
        return all(v in self.decoded for v in inner)


def inter_ring_transfer(g: Graph, outer: Iterable[int], inner: Iterable[int], batch: Sequence[int],
                        cfg: EngineConfig, consts: Constants = DEFAULT) -> TransferResult:
    """Standalone boundary hand-off of one batch from ``outer`` to ``inner``."""
    outer, inner = sorted(outer), sorted(inner)
    if not outer:
        raise PipelineError("outer boundary is empty")
    if not batch:
        raise PipelineError("empty batch")
    L = clog2(g.n)
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=max(cfg.max_rounds, fec_length(len(batch), L, consts)), trace_level=cfg.trace_level)
    prog = _Progress(g.n, [batch])
    for v in outer:
        prog.give(v, 0, batch, 0)
    lane = ch.lane()
    fec_transfer(lane, outer, inner, 0, prog, L, consts, salt=salt_of("fec"))
    decoded = {v: prog.first[v, 0] for v in inner if (v, 0) in prog.first and v not in outer}
    return TransferResult(decoded, lane.clock, ch.trace())


# -- pipelines ----------------------------------------------------------------------------


def batch_size(k: int, depth: int, n: int) -> int:
    L = clog2(n)
    return max(1, min(k, max(L, -(-depth // L ** 3))))


def _prepare(g: Graph, source: int, cfg: EngineConfig, depth: int | None, k: int, consts: Constants,
             budget: int | None) -> tuple[Channel, int, int]:
    if not 0 <= source < g.n:
        raise PipelineError(f"source {source} out of range")
    if not cfg.collision_detection:
        raise CollisionDetectionRequired("ring construction starts with a collision wave")
    ecc = bfs_layering(g, source).diameter_bound
    D = ecc if depth is None else depth
    if D < ecc:
        raise PipelineError(f"depth bound {D} below the source eccentricity {ecc}")
    if budget is None:
        budget = pipeline_budget(D, k, g.n, consts)
    ch = Channel(g, collision_detection=True, seed=cfg.seed, max_rounds=budget, trace_level=cfg.trace_level)
    return ch, D, budget


def _rings(lane: Lane, g: Graph, source: int, D: int, L: int, consts: Constants, setup: str,
           stages: dict[str, int], failures: list[str]) -> tuple[RingDecomposition, list[GstLabels]]:
    t0 = lane.clock
    level = collision_wave(lane, source, D)
    stages["wave"] = lane.clock - t0
    if len(level) < g.n:
        failures.append(f"collision wave reached {len(level)} of {g.n} nodes")
        raise PipelineError(failures[-1])
    rings = decompose_rings(level, ring_width(D, g.n, consts))
    t0 = lane.clock
    labels, fails = setup_rings(lane, g, rings, L, consts, mode=setup)
    stages["setup"] = lane.clock - t0
    failures += fails
    return rings, labels


def _finish(name: str, g: Graph, D: int, k: int, prog: _Progress, lane: Lane, ch: Channel, stages, failures,
            params) -> PipelineResult:
    ok = prog.complete() and prog.correct()
    if not ok:
        failures = failures + prog.missing()[:20]
    return PipelineResult(name, g.n, D, k, ok, prog.completion_round() if ok else None, lane.clock,
                          stages, failures, params, ch)


def single_message_broadcast(g: Graph, source: int, message: int, cfg: EngineConfig,
                             consts: Constants = DEFAULT, *, depth: int | None = None, setup: str = "distributed",
                             noise_policy: str = "noise", budget: int | None = None) -> PipelineResult:
    """Unknown topology, one message: per ring an MMV stage, then a Decay bridge to the next ring."""
    L = clog2(g.n)
    ch, D, budget = _prepare(g, source, cfg, depth, 1, consts, budget)
    lane = ch.lane()
    stages: dict[str, int] = {}
    failures: list[str] = []
    prog = _Progress(g.n, [[message]])
    prog.give(source, 0, [message], 0)
    params = {"budget": budget}
    try:
        rings, labels = _rings(lane, g, source, D, L, consts, setup, stages, failures)
        params.update(ring_width=rings.width, rings=rings.count)
        T = mmv_stage_length(rings.width, 1, L, consts)
        bridge = consts.decay_whp_factor * L
        t0 = lane.clock
        for j in range(rings.count):
            ring_stage_full(lane, labels[j], 0, prog, L, T, noise_policy=noise_policy, salt=salt_of("ring", j))
            if j + 1 < rings.count:
                inner = rings.inner(j + 1)

                def hear(h):
                    for v, o in h.items():
                        if isinstance(o, Packet) and o.kind is Kind.DATA:
                            prog.give(v, 0, [o.body], lane.now)

                senders = [v for v in rings.outer(j) if 0 in prog.have[v]]
                decay(lane, senders, lambda v: Packet.data(v, prog.have[v][0][0]), bridge, L,
                      listeners=set(inner), salt=salt_of("bridge", j), on_heard=hear)
        stages["broadcast"] = lane.clock - t0
    except (BudgetExhausted, PipelineError) as exc:
        failures.append(f"aborted: {exc}")
    return _finish("single", g, D, 1, prog, lane, ch, stages, failures, params)


def multi_message_unknown(g: Graph, source: int, messages: Sequence[int], cfg: EngineConfig,
                          consts: Constants = DEFAULT, *, mode: str = "full", depth: int | None = None,
                          setup: str = "distributed", noise_policy: str = "noise",
                          budget: int | None = None) -> PipelineResult:
    """Unknown topology, ``k`` messages pipelined through the rings in batches.

    Batch ``b`` occupies ring ``j`` during epoch ``j + s * b``. The spacing
    ``s`` keeps concurrently busy rings (and the boundary a ring is
    feeding) out of each other's reach. An epoch is one MMV stage
    followed by one FEC hand-off.
    """
    if mode not in CODING_MODES:
        raise PipelineError(f"coding mode must be one of {CODING_MODES}")
    if not messages:
        raise PipelineError("no messages")
    L = clog2(g.n)
    k = len(messages)
    ch, D, budget = _prepare(g, source, cfg, depth, k, consts, budget)
    lane = ch.lane()
    stages: dict[str, int] = {}
    failures: list[str] = []
    kb = batch_size(k, D, g.n)
    prog = _Progress(g.n, [messages[i:i + kb] for i in range(0, k, kb)])
    B = len(prog.batches)
    for b, msgs in enumerate(prog.batches):
        prog.give(source, b, msgs, 0)
    params: dict[str, int | str] = {"budget": budget, "batch": kb, "batches": B, "mode": mode}
    plan: list[tuple[int, int, int]] = []
    try:
        rings, labels = _rings(lane, g, source, D, L, consts, setup, stages, failures)
        R, w = rings.count, rings.width
        spacing = max(2, -(-3 // w))
        if mode == "full":
            T = mmv_stage_length(w, kb, L, consts)
        else:
            T = generation_stage_length(w, kb, L, consts)
        F = fec_length(kb, L, consts) if R > 1 else 0
        params.update(ring_width=w, rings=R, spacing=spacing, stage=T, fec=F)
        t0 = lane.clock
        for e in range(R + spacing * (B - 1)):
            for j in range(R):
                b, r = divmod(e - j, spacing)
                if e < j or r or b >= B:
                    continue
                plan.append((e, j, b))
                sub = lane.sub(1, 0)
                if mode == "full":
                    ring_stage_full(sub, labels[j], b, prog, L, T, noise_policy=noise_policy,
                                    salt=salt_of("ring", j, b))
                else:
                    ring_stage_generation(sub, labels[j], b, prog, L, w, consts, noise_policy=noise_policy,
                                          salt=salt_of("ring", j, b))
                sub.idle(T - sub.clock)
                if j + 1 < R:
                    fec_transfer(sub, rings.outer(j), rings.inner(j + 1), b, prog, L, consts,
                                 salt=salt_of("fec", j, b))
                if sub.clock > T + F:
                    raise AssertionError(f"epoch overran: {sub.clock} > {T + F}")
            lane.idle(T + F)
        stages["broadcast"] = lane.clock - t0
    except (BudgetExhausted, PipelineError) as exc:
        failures.append(f"aborted: {exc}")
    res = _finish(f"multi-unknown-{mode}", g, D, k, prog, lane, ch, stages, failures, params)
    res.plan = plan
    return res


def multi_message_known(g: Graph, source: int, messages: Sequence[int], cfg: EngineConfig,
                        consts: Constants = DEFAULT, *, labels: GstLabels | None = None,
                        noise_policy: str = "noise", slow_index: str = "vdist",
                        budget: int | None = None) -> PipelineResult:
    """Known topology: the MMV schedule over a precomputed GST, RLNC over all ``k`` messages."""
    if not messages:
        raise PipelineError("no messages")
    L = clog2(g.n)
    k = len(messages)
    D = bfs_layering(g, source).diameter_bound
    if labels is None:
        labels = build_gst_oracle(g, source)
    elif labels.source != source:
        raise PipelineError(f"labels are rooted at {labels.source}, not {source}")
    if budget is None:
        budget = pipeline_budget(D, k, g.n, consts)
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed, max_rounds=budget,
                 trace_level=cfg.trace_level)
    lane = ch.lane()
    prog = _Progress(g.n, [list(messages)])
    prog.give(source, 0, list(messages), 0)
    states = mmv_states(labels, noise_policy=noise_policy, slow_index=slow_index)
    for v, s in states.items():
        s.knowledge = _full_space(0, messages) if v == source else KnowledgeSpace(0, k)
    count = [1]

    def deliver(s: MmvNodeState, pkt: Packet) -> bool:
        sp = s.knowledge
        if pkt.generation != 0 or pkt.width != k or not sp.insert(pkt.coeffs, pkt.body):
            return False
        if sp.full:
            prog.give(s.node, 0, decode(sp), lane.now)
            count[0] += 1
        return True

    failures: list[str] = []
    runner = MmvRunner(lane, states, L, salt=salt_of("mmv"), deliver=deliver)
    try:
        runner.run(budget, stop=lambda: count[0] == g.n)
    except BudgetExhausted as exc:
        failures.append(f"aborted: {exc}")
    short = {v: s.knowledge.rank for v, s in states.items() if not s.knowledge.full}
    if short:
        failures.append("ranks " + " ".join(f"{v}:{r}" for v, r in sorted(short.items())))
    return _finish("multi-known", g, D, k, prog, lane, ch, {"broadcast": lane.clock}, failures,
                   {"budget": budget, "slow_index": slow_index, "noise_policy": noise_policy})
