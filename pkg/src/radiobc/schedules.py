"""The multi-message viable GST schedule and its trace checkers.

Fast transmissions run on even rounds and pipeline packets down fast
stretches, one hop every two rounds. Slow transmissions run on odd rounds,
use Decay-style probabilities and are indexed by virtual distance.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .engine import Channel, EngineConfig, Kind, Lane, NodeRng, Packet, Trace, salt_of
from .graph import Graph, clog2
from .gst import GstLabels
from .rlnc import KnowledgeSpace, encode_random

NOISE_POLICIES = ("noise", "silent")
SLOW_INDEX = ("vdist", "level")


@dataclass
class MmvNodeState:
    node: int
    level: int
    rank: int
    vdist: int
    parent: int | None
    stretch_start: bool
    fast_parent: bool
    knowledge: KnowledgeSpace | None = None
    last_fast_received: Packet | None = None
    noise_policy: str = "noise"

    @classmethod
    def from_labels(cls, labels: GstLabels, v: int, *, noise_policy: str = "noise",
                    slow_index: str = "vdist") -> "MmvNodeState":
        if noise_policy not in NOISE_POLICIES:
            raise ValueError(f"noise policy must be one of {NOISE_POLICIES}")
        d = labels.vdist[v] if slow_index == "vdist" else labels.level[v]
        return cls(v, labels.level[v], labels.rank[v], d, labels.parent[v],
                   labels.stretch_start(v), v in labels.fast_parents(), noise_policy=noise_policy)


def fast_slot(t: int, level: int, rank: int, L: int) -> bool:
    return t % (6 * L) == (2 * (level + 3 * rank)) % (6 * L)


def slow_exponent(t: int, vdist: int, L: int) -> int | None:
    """Exponent of the slow transmit probability, or ``None`` when not prompted."""
    if t % 2 == 0 or (t - 1 - 2 * vdist) % 6:
        return None
    return ((t - 1 - 2 * vdist) // 6) % L


def _filler(state: MmvNodeState) -> Packet | None:
    return Packet.noise(state.node) if state.noise_policy == "noise" else None


def _fresh(state: MmvNodeState, space: KnowledgeSpace | None, rng: NodeRng, rnd: int, salt: int) -> Packet | None:
    if space is None or space.rank == 0:
        return _filler(state)
    return encode_random(space, rng, rnd, salt)


def mmv_action(state: MmvNodeState, t: int, n: int, rng: NodeRng, *, rnd: int | None = None,
               salt: int = 0) -> Packet | None:
    """What ``state.node`` sends at schedule round ``t`` (``None`` = listen).

    Only nodes with a same-rank child take fast slots: a stretch end has no
    one to serve. ``rnd`` is the global round used to key randomness.
    """
    L = clog2(n)
    rnd = t if rnd is None else rnd
    if t % 2 == 0:
        if not state.fast_parent or not fast_slot(t, state.level, state.rank, L):
            return None
        if state.stretch_start:
            return _fresh(state, state.knowledge, rng, rnd, salt)
        last = state.last_fast_received
        if last is None:
            return _filler(state)
        return Packet.coded(state.node, last.generation, last.coeffs, last.width, last.body)
    e = slow_exponent(t, state.vdist, L)
    if e is None or not rng.coin(rnd, e, salt):
        return None
    return _fresh(state, state.knowledge, rng, rnd, salt + 1)


# -- runner ---------------------------------------------------------------------


@dataclass
class MmvResult:
    rounds: int
    completion: int | None                     # local round at which the stop condition held
    full_at: dict[int, int] = field(default_factory=dict)


class MmvRunner:
    """Executes the schedule for a set of node states on one lane.

    ``space_of`` picks the knowledge space a node encodes from, and
    ``deliver`` stores a received coded packet. Both default to the
    single ``state.knowledge`` space. Generation-based pipelines override
    them.
    """

    def __init__(self, lane: Lane, states: Mapping[int, MmvNodeState], L: int, *, salt: int = 0,
                 space_of: Callable[[MmvNodeState], KnowledgeSpace | None] | None = None,
                 deliver: Callable[[MmvNodeState, Packet], bool] | None = None):
        self.lane = lane
        self.states = dict(states)
        self.L = L
        self.salt = salt
        self.space_of = space_of or (lambda s: s.knowledge)
        self.deliver = deliver or _default_deliver
        self.t = 0
        fast: dict[int, list[int]] = defaultdict(list)
        slow: dict[int, dict[int, list[int]]] = defaultdict(lambda: defaultdict(list))
        for v, s in self.states.items():
            if s.fast_parent:
                fast[(s.level + 3 * s.rank) % (3 * L)].append(v)
            slow[s.vdist % 3][s.vdist].append(v)
        self.fast = {k: sorted(vs) for k, vs in fast.items()}
        self.slow = {r: [(d, sorted(vs), lane.streams.keys(sorted(vs))) for d, vs in sorted(grp.items())]
                     for r, grp in slow.items()}
        self.listeners = set(self.states)

    def _transmitters(self, t: int, rnd: int) -> dict[int, Packet]:
        tx: dict[int, Packet] = {}
        if t % 2 == 0:
            for v in self.fast.get((t // 2) % (3 * self.L), ()):
                s = self.states[v]
                if s.stretch_start:
                    pkt = _fresh(s, self.space_of(s), self.lane.rng(v), rnd, self.salt)
                elif s.last_fast_received is not None:
                    last = s.last_fast_received
                    pkt = Packet.coded(v, last.generation, last.coeffs, last.width, last.body)
                else:
                    pkt = _filler(s)
                if pkt is not None:
                    tx[v] = pkt
            return tx
        for d, nodes, keys in self.slow.get(((t - 1) // 2) % 3, ()):
            if (t - 1 - 2 * d) % 6:
                continue
            e = ((t - 1 - 2 * d) // 6) % self.L
            hits = self.lane.streams.coins(keys, rnd, e, self.salt)
            for j in np.flatnonzero(hits):
                v = nodes[j]
                s = self.states[v]
                pkt = _fresh(s, self.space_of(s), self.lane.rng(v), rnd, self.salt + 1)
                if pkt is not None:
                    tx[v] = pkt
        return tx

    def run(self, rounds: int, *, stop: Callable[[], bool] | None = None,
            watch: Iterable[int] | None = None) -> MmvResult:
        """Advance up to ``rounds`` schedule rounds.

        With ``stop`` the run ends early once it returns true. ``watch``
        lists nodes whose first full-rank round is reported.
        """
        res = MmvResult(0, None)
        pending = set(watch or ())
        for v in list(pending):
            sp = self.space_of(self.states[v])
            if sp is not None and sp.full:
                res.full_at[v] = self.t
                pending.discard(v)
        if stop is not None and stop():
            res.completion = self.t
            return res
        for _ in range(rounds):
            self.t += 1
            t = self.t
            rnd = self.lane.at(self.lane.clock + 1)
            tx = self._transmitters(t, rnd)
            if not tx:
                self.lane.idle(1)
                res.rounds += 1
                continue
            heard = self.lane.step(tx, self.listeners)
            res.rounds += 1
            fast_round = t % 2 == 0
            for v, o in heard.items():
                s = self.states[v]
                if fast_round and o is not None and isinstance(o, Packet) and o.src == s.parent:
                    s.last_fast_received = o if o.kind is Kind.CODED else None
                if isinstance(o, Packet) and o.kind is Kind.CODED:
                    if self.deliver(s, o) and v in pending:
                        sp = self.space_of(s)
                        if sp is not None and sp.full:
                            res.full_at[v] = t
                            pending.discard(v)
            if stop is not None and stop():
                res.completion = t
                break
        return res


def _default_deliver(state: MmvNodeState, pkt: Packet) -> bool:
    sp = state.knowledge
    if sp is None or pkt.generation != sp.generation_id or pkt.width != sp.width:
        return False
    return sp.insert(pkt.coeffs, pkt.body)


def mmv_states(labels: GstLabels, *, noise_policy: str = "noise", slow_index: str = "vdist") -> dict[int, MmvNodeState]:
    fp = labels.fast_parents()
    out = {}
    for v in labels.nodes:
        d = labels.vdist[v] if slow_index == "vdist" else labels.level[v]
        out[v] = MmvNodeState(v, labels.level[v], labels.rank[v], d, labels.parent[v],
                              labels.stretch_start(v), v in fp, noise_policy=noise_policy)
    return out


# -- trace checkers ---------------------------------------------------------------


@dataclass
class ScheduleReport:
    violations: list[str] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _local(trace: Trace, offset: int, stride: int, until: int | None):
    for rnd, txs in sorted(trace.transmissions().items()):
        if (rnd - offset) % stride:
            continue
        t = (rnd - offset) // stride
        if t < 1 or (until is not None and t > until):
            continue
        yield rnd, t, txs


def check_fast_collision_freedom(trace: Trace, labels: GstLabels, g: Graph, *, n: int | None = None,
                                 offset: int = 0, stride: int = 1, until: int | None = None) -> ScheduleReport:
    """Every fast transmission reaches each same-rank child without interference.

    Also asserts the parity split: schedule-labeled transmissions on even
    rounds sit in their node's fast slot, those on odd rounds in their
    node's slow slot. Local schedule round ``t`` is ``(round - offset) / stride``.
    """
    L = clog2(n or g.n)
    rep = ScheduleReport()
    kids: dict[int, list[int]] = defaultdict(list)
    for v, p in labels.parent.items():
        if p is not None and labels.rank[v] == labels.rank[p]:
            kids[p].append(v)
    for rnd, t, txs in _local(trace, offset, stride, until):
        mine = {u: p for u, p in txs.items() if u in labels.level}
        for u in mine:
            rep.checked += 1
            if t % 2 == 0:
                if not fast_slot(t, labels.level[u], labels.rank[u], L):
                    rep.violations.append(f"round {rnd}: node {u} sent on an even round outside its fast slot")
                    continue
                for c in kids.get(u, ()):
                    senders = [w for w in g.nbrs[c] if w in txs]
                    if c in txs or senders != [u]:
                        rep.violations.append(
                            f"round {rnd}: fast packet of {u} to {c} collided with {sorted(set(senders) - {u})}")
            else:
                d = labels.vdist[u] if labels.vdist else 0
                if slow_exponent(t, d, L) is None:
                    rep.violations.append(f"round {rnd}: node {u} sent on an odd round outside its slow slot")
    return rep


def check_fast_pipelining(trace: Trace, labels: GstLabels, g: Graph, *, n: int | None = None,
                          offset: int = 0, stride: int = 1, until: int | None = None) -> ScheduleReport:
    """A coded packet a stretch start sends at ``t`` reaches each member at level ``l'`` by ``t + 2 (l' - l)``."""
    L = clog2(n or g.n)
    rep = ScheduleReport()
    kids = labels.children()
    chain_of: dict[int, list[int]] = {}
    for u in labels.fast_parents():
        if not labels.stretch_start(u):
            continue
        chain, cur = [], u
        while True:
            nxt = [c for c in kids.get(cur, ()) if labels.rank[c] == labels.rank[u]]
            if not nxt:
                break
            cur = nxt[0]
            chain.append(cur)
        chain_of[u] = chain
    got: dict[int, dict[int, Packet]] = defaultdict(dict)
    for rnd, v, pkt in trace.receptions():
        got[v][rnd] = pkt
    last_round = trace.rounds
    for rnd, t, txs in _local(trace, offset, stride, until):
        if t % 2:
            continue
        for u, pkt in txs.items():
            if u not in chain_of or pkt.kind is not Kind.CODED:
                continue
            for w in chain_of[u]:
                hops = labels.level[w] - labels.level[u]
                deadline = rnd + stride * 2 * hops
                if deadline > last_round or (until is not None and t + 2 * hops > until):
                    break
                rep.checked += 1
                hit = any(q.kind is Kind.CODED and (q.generation, q.coeffs, q.body) == (pkt.generation, pkt.coeffs, pkt.body)
                          for r2, q in got[w].items() if rnd <= r2 <= deadline)
                if not hit:
                    rep.violations.append(f"round {rnd}: wave from {u} missed {w} by round {deadline}")
    return rep


# -- standalone runs -------------------------------------------------------------


def run_mmv(g: Graph, labels: GstLabels, messages: list[int], cfg: EngineConfig, *, rounds: int | None = None,
            noise_policy: str = "noise", slow_index: str = "vdist", body_bits: int = 32,
            generation_id: int = 0) -> tuple[MmvResult, Trace, dict[int, MmvNodeState]]:
    """MMV schedule with RLNC over one generation until every node decodes (or the budget ends)."""
    L = clog2(g.n)
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=cfg.max_rounds, trace_level=cfg.trace_level)
    states = mmv_states(labels, noise_policy=noise_policy, slow_index=slow_index)
    k = len(messages)
    for v, s in states.items():
        s.knowledge = KnowledgeSpace(generation_id, k)
    src = states[labels.source].knowledge
    for i, m in enumerate(messages):
        src.insert(1 << i, m)
    full = {v for v, s in states.items() if s.knowledge.full}

    def deliver(s: MmvNodeState, pkt: Packet) -> bool:
        new = _default_deliver(s, pkt)
        if new and s.knowledge.full:
            full.add(s.node)
        return new

    runner = MmvRunner(ch.lane(), states, L, salt=salt_of("mmv"), deliver=deliver)
    budget = cfg.max_rounds if rounds is None else rounds
    res = runner.run(budget, stop=lambda: len(full) == len(states), watch=states)
    return res, ch.trace(), states
