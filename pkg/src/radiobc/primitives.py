"""Building blocks: Decay (standard and MMV), the collision wave, and recruiting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Container, Iterable, Mapping

import numpy as np

from .engine import (COLLISION, Channel, EngineConfig, Kind, Lane, NodeRng, Outcome, Packet,
                     Program, Trace, run, salt_of)
from .graph import Graph, bfs_layering, clog2

# -- Decay --------------------------------------------------------------------


class DecayMode(str, enum.Enum):
    STANDARD = "standard"
    MMV = "mmv"


@dataclass(frozen=True)
class DecayParams:
    phase_len: int
    phases: int = 1
    mode: DecayMode = DecayMode.STANDARD

    def __post_init__(self) -> None:
        if self.phase_len < 1 or self.phases < 1:
            raise ValueError("phase length and phase count must be positive")

    @classmethod
    def for_n(cls, n: int, phases: int = 1, mode: DecayMode | str = DecayMode.STANDARD) -> "DecayParams":
        return cls(clog2(n), phases, DecayMode(mode))


def decay_exponent(t: int, params: DecayParams, level: int = 0) -> int | None:
    """Exponent ``e`` of the transmit probability ``2**-e`` at round ``t``.

    ``None`` means the node is not scheduled. Standard mode uses phase
    round ``i = 1..phase_len``; MMV mode only prompts nodes whose level
    satisfies ``t = level + 1 (mod 3)``.
    """
    if params.mode is DecayMode.STANDARD:
        return (t - 1) % params.phase_len + 1
    if (t - level - 1) % 3:
        return None
    return ((t - level - 1) // 3) % params.phase_len


def decay_action(has_message: bool, t: int, params: DecayParams, rng: NodeRng, *,
                 level: int = 0, packet: Packet | None = None, noise: bool = True,
                 inject: bool = False, salt: int = 0) -> Packet | None:
    """One node's Decay decision at round ``t``; ``None`` means listen.

    In MMV mode a prompted node without the message sends noise unless
    ``noise`` is false. Standard mode keeps uninformed nodes silent; with
    ``inject`` they send noise on the same coin, which is what a schedule
    designed for silent uninformed nodes faces inside a coded pipeline.
    """
    e = decay_exponent(t, params, level)
    if e is None:
        return None
    if params.mode is DecayMode.STANDARD and not has_message and not inject:
        return None
    if not rng.coin(t, e, salt):
        return None
    if has_message:
        return packet if packet is not None else Packet.data(rng.node)
    return Packet.noise(rng.node) if noise else None


def decay(lane: Lane, senders: Iterable[int], packet: Mapping[int, Packet] | Callable[[int], Packet] | None,
          phases: int, phase_len: int, *, listeners: Container[int] | None = None, salt: int = 0,
          on_heard: Callable[[dict[int, Outcome]], None] | None = None,
          fresh: Callable[[int, int], Packet] | None = None) -> None:
    """Run ``phases`` standard Decay phases on ``lane`` with a fixed sender set.

    Each sender repeats its ``packet``, or builds a new one per
    transmission with ``fresh(node, round)``. Uses exactly
    ``phases * phase_len`` rounds of the lane; silent rounds are skipped
    without cost.
    """
    nodes = sorted(senders)
    total = phases * phase_len
    if not nodes:
        lane.idle(total)
        return
    if fresh is None:
        make = packet if callable(packet) else packet.__getitem__
        pkts = [make(u) for u in nodes]
    streams = lane.streams
    keys = streams.keys(nodes)
    for step in range(total):
        rnd = lane.at(lane.clock + 1)
        hits = np.flatnonzero(streams.coins(keys, rnd, step % phase_len + 1, salt))
        if not len(hits):
            lane.idle(1)
            continue
        if fresh is None:
            tx = {nodes[j]: pkts[j] for j in hits}
        else:
            tx = {nodes[j]: fresh(nodes[j], rnd) for j in hits}
        heard = lane.step(tx, listeners)
        if on_heard is not None and heard:
            on_heard(heard)


class _DecayNode(Program):
    def __init__(self, params: DecayParams, level: int, informed: bool, payload: int, noise: bool,
                 inject: bool = False):
        self.inject = inject
        self.params = params
        self.level = level
        self.informed = informed
        self.payload = payload
        self.noise = noise
        self.first: int | None = 0 if informed else None

    def on_round(self, t: int) -> Packet | None:
        pkt = Packet.data(self.node, self.payload) if self.informed else None
        return decay_action(self.informed, t, self.params, self.rng, level=self.level,
                            packet=pkt, noise=self.noise, inject=self.inject)

    def on_outcome(self, t: int, outcome: Outcome) -> None:
        if not self.informed and isinstance(outcome, Packet) and outcome.kind is Kind.DATA:
            self.informed = True
            self.first = t

    def done(self) -> bool:
        return self.informed


@dataclass
class BroadcastRun:
    completion_round: int | None
    trace: Trace
    first_reception: list[int | None]
    exhausted: bool

    @property
    def completed(self) -> bool:
        return self.completion_round is not None


def decay_broadcast(g: Graph, source: int, msg: int, cfg: EngineConfig,
                    mode: DecayMode | str = DecayMode.STANDARD, *, noise: bool = True,
                    levels: list[int] | None = None, inject_noise: bool = False) -> BroadcastRun:
    """Broadcast ``msg`` from ``source`` with Decay until every node holds it.

    ``inject_noise`` makes uninformed nodes of the standard schedule send
    noise (see :func:`decay_action`).
    """
    params = DecayParams.for_n(g.n, 1, mode)
    if params.mode is DecayMode.MMV and levels is None:
        levels = list(bfs_layering(g, source).level)
    progs = [_DecayNode(params, levels[v] if levels else 0, v == source, msg, noise, inject_noise)
             for v in range(g.n)]
    res = run(progs, g, cfg)
    firsts = [p.first for p in progs]
    return BroadcastRun(None if res.exhausted else res.rounds, res.trace, firsts, res.exhausted)


# -- collision wave ------------------------------------------------------------


class CollisionDetectionRequired(RuntimeError):
    pass


def collision_wave(lane: Lane, source: int, depth: int) -> dict[int, int]:
    """Levels from a wave of transmissions lasting ``depth`` rounds.

    A node first hearing anything (a packet or a collision) in round ``r``
    of the wave is at level ``r`` and transmits from round ``r + 1`` on.
    """
    if not lane.channel.cd:
        raise CollisionDetectionRequired("the collision wave needs collision detection")
    level = {source: 0}
    active = [source]
    for r in range(1, depth + 1):
        heard = lane.step({u: Packet.control(u, "wave") for u in active})
        fresh = [v for v in heard if v not in level]
        for v in fresh:
            level[v] = r
        active.extend(sorted(fresh))
    return level


def collision_wave_bfs(g: Graph, source: int, depth: int, cfg: EngineConfig) -> tuple[list[int], Trace]:
    if not cfg.collision_detection:
        raise CollisionDetectionRequired("the collision wave needs collision detection")
    ch = Channel(g, collision_detection=True, seed=cfg.seed, max_rounds=cfg.max_rounds,
                 trace_level=cfg.trace_level)
    level = collision_wave(ch.lane(), source, depth)
    if len(level) < g.n:
        missing = sorted(set(range(g.n)) - set(level))
        raise ValueError(f"wave of depth {depth} misses nodes {missing[:8]}")
    return [level[v] for v in range(g.n)], ch.trace()


# -- recruiting -----------------------------------------------------------------


class ChildClass(str, enum.Enum):
    ZERO = "zero"
    ONE = "one"
    TWO_PLUS = "two_plus"

    @classmethod
    def of(cls, count: int) -> "ChildClass":
        return cls.ZERO if count == 0 else cls.ONE if count == 1 else cls.TWO_PLUS


_CLASS_CODE = {ChildClass.ZERO: 0, ChildClass.ONE: 1, ChildClass.TWO_PLUS: 2}
_CODE_CLASS = {v: k for k, v in _CLASS_CODE.items()}


@dataclass
class RecruitResult:
    parent: dict[int, int] = field(default_factory=dict)
    red_child_class: dict[int, ChildClass] = field(default_factory=dict)
    blue_knows_class: dict[int, ChildClass] = field(default_factory=dict)
    unrecruited: set[int] = field(default_factory=set)
    # global round in which each recruited blue heard its parent's announcement
    announce_round: dict[int, int] = field(default_factory=dict)
    rounds: int = 0


def recruit_length(phase_len: int, iterations: int, reply_phases: int = 1) -> int:
    """Rounds used by one recruiting run: the iterations plus one echo round each."""
    return iterations * (reply_phases * phase_len + 2) + iterations


def recruit(lane: Lane, red: Iterable[int], blue: Iterable[int], phase_len: int, iterations: int,
            *, reply_phases: int = 1, per_level: int | None = None, salt: int = 0,
            tag: str = "rc") -> RecruitResult:
    """Recruiting on ``lane``; uses exactly :func:`recruit_length` rounds.

    Iteration ``j`` (1-based): reds announce with probability
    ``2**-ceil(j / per_level)``, by default sweeping exponents ``1..phase_len``; blues that heard exactly one red reply
    with one Decay phase; reds confirm by repeating their announcement
    pattern with the single replier's id, a sigma marker, or an empty
    packet. A closing echo pass repeats each confirming iteration's
    pattern once more carrying the red's final class, so every recruited
    blue learns how many children its parent took.
    """
    per_level = per_level or max(1, iterations // phase_len)
    reds = sorted(set(red))
    blues = set(blue)
    if blues & set(reds):
        raise ValueError("red and blue sets must be disjoint")
    res = RecruitResult(unrecruited=set(blues))
    count = {v: 0 for v in reds}
    start = lane.clock
    streams = lane.streams
    keys = streams.keys(reds) if reds else None
    patterns: list[tuple[list[int], list[int]] | None] = []
    span = reply_phases * phase_len + 2
    for j in range(1, iterations + 1):
        if not reds or not res.unrecruited:
            lane.idle(span)
            patterns.append(None)
            continue
        exp = math.ceil(j / per_level)
        ann_round = lane.at(lane.clock + 1)
        hits = np.flatnonzero(streams.coins(keys, ann_round, exp, salt))
        pattern = [reds[x] for x in hits]
        if not pattern:
            lane.idle(span)
            patterns.append(None)
            continue
        heard = lane.step({v: Packet.control(v, f"{tag}-ann", red=v) for v in pattern}, res.unrecruited)
        got = {u: o.src for u, o in heard.items() if isinstance(o, Packet)}
        replies: dict[int, set[int]] = {v: set() for v in pattern}
        pset = set(pattern)

        def collect(h: dict[int, Outcome]) -> None:
            for v, o in h.items():
                if isinstance(o, Packet) and o.get("red") == v:
                    replies[v].add(o.get("blue"))

        decay(lane, got, lambda u: Packet.control(u, f"{tag}-rep", blue=u, red=got[u]), reply_phases, phase_len,
              listeners=pset, salt=salt + 1, on_heard=collect)
        confirm = {}
        for v in pattern:
            ids = replies[v]
            if len(ids) == 1:
                confirm[v] = Packet.control(v, f"{tag}-ok", red=v, blue=next(iter(ids)))
            elif ids:
                confirm[v] = Packet.control(v, f"{tag}-sigma", red=v)
            else:
                confirm[v] = Packet.control(v, f"{tag}-empty", red=v)
        heard = lane.step(confirm, got)
        joined: list[int] = []
        for u, v in got.items():
            o = heard.get(u)
            if not isinstance(o, Packet) or o.src != v:
                continue
            if o.tag == f"{tag}-sigma" or (o.tag == f"{tag}-ok" and o.get("blue") == u):
                res.parent[u] = v
                res.announce_round[u] = ann_round
                res.unrecruited.discard(u)
                joined.append(u)
        for v in pattern:
            n_ids = len(replies[v])
            count[v] += 1 if n_ids == 1 else 2 if n_ids else 0
        patterns.append((sorted({res.parent[u] for u in joined}), joined) if joined else None)
    for v in reds:
        res.red_child_class[v] = ChildClass.of(count[v])
    for entry in patterns:
        if entry is None:
            lane.idle(1)
            continue
        senders, joined = entry
        heard = lane.step({v: Packet.control(v, f"{tag}-echo", red=v, kids=_CLASS_CODE[res.red_child_class[v]])
                           for v in senders}, set(joined))
        for u in joined:
            o = heard.get(u)
            if isinstance(o, Packet) and o.src == res.parent[u]:
                res.blue_knows_class[u] = _CODE_CLASS[o.get("kids")]
    res.rounds = lane.clock - start
    return res


def recruiting_protocol(g: Graph, red: Iterable[int], blue: Iterable[int], cfg: EngineConfig, *,
                        iterations_factor: int = 4, reply_phases: int = 2) -> tuple[RecruitResult, Trace]:
    """Standalone recruiting run on ``g``; nodes outside ``red`` and ``blue`` stay silent."""
    L = clog2(g.n)
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=cfg.max_rounds, trace_level=cfg.trace_level)
    res = recruit(ch.lane(), red, blue, L, iterations_factor * L * L, reply_phases=reply_phases,
                  salt=salt_of("recruit"))
    return res, ch.trace()
