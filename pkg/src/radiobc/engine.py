"""Synchronous radio-network round engine.

A listening node receives a packet iff exactly one neighbor transmits.
With collision detection two or more transmitters produce ``COLLISION``;
without it they are indistinguishable from silence. Transmitters learn
nothing about the channel in the round they transmit.

Two ways to drive the engine:

* :func:`run` executes one :class:`Program` per node, round by round.
* :class:`Channel` and its :class:`Lane` views let protocol drivers submit
  the transmitters of a round directly. Only rounds with a transmission
  are materialized, so fixed-length schedules with long silent stretches
  cost nothing while idle. Lanes map a protocol's local clock onto global
  rounds, which is how concurrent sub-protocols are time-multiplexed.

Randomness is counter based: every draw is a pure function of
``(seed, node, round, salt)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Container, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from .graph import Graph, clog2

# -- packets ------------------------------------------------------------------


class Kind(str, Enum):
    DATA = "data"
    CODED = "coded"
    NOISE = "noise"
    CONTROL = "control"


@dataclass(frozen=True, slots=True)
class Packet:
    kind: Kind
    src: int
    body: int = 0
    generation: int = 0
    coeffs: int = 0
    width: int = 0
    tag: str = ""
    fields: tuple[tuple[str, int], ...] = ()

    @classmethod
    def data(cls, src: int, body: int = 0, **fields: int) -> "Packet":
        return cls(Kind.DATA, src, body=body, fields=tuple(sorted(fields.items())))

    @classmethod
    def coded(cls, src: int, generation: int, coeffs: int, width: int, body: int) -> "Packet":
        return cls(Kind.CODED, src, body=body, generation=generation, coeffs=coeffs, width=width)

    @classmethod
    def noise(cls, src: int) -> "Packet":
        return cls(Kind.NOISE, src)

    @classmethod
    def control(cls, src: int, tag: str, **fields: int) -> "Packet":
        return cls(Kind.CONTROL, src, tag=tag, fields=tuple(sorted(fields.items())))

    def get(self, key: str, default: int | None = None) -> int | None:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def summary(self) -> str:
        """Whitespace-free rendering; :func:`parse_packet` inverts it."""
        extra = "".join(f",{k}={v}" for k, v in self.fields)
        if self.kind is Kind.NOISE:
            return f"noise:src={self.src}"
        if self.kind is Kind.CODED:
            return (f"coded:src={self.src},gen={self.generation},w={self.width},"
                    f"c={self.coeffs:#x},b={self.body:#x}")
        if self.kind is Kind.DATA:
            return f"data:src={self.src},b={self.body:#x}{extra}"
        return f"control:src={self.src},tag={self.tag}{extra}"

    def bit_cost(self, n: int, body_bits: int = 0) -> int:
        """Nominal size: IDs and fields cost ``clog2(n)`` bits, coefficients one bit each."""
        idbits = clog2(n)
        if self.kind is Kind.NOISE:
            return 0
        if self.kind is Kind.CODED:
            return self.width + body_bits
        fields = idbits * len(self.fields)
        if self.kind is Kind.DATA:
            return max(body_bits, self.body.bit_length()) + fields
        return idbits + fields


def parse_packet(text: str) -> Packet:
    kind, _, rest = text.partition(":")
    kv: dict[str, str] = {}
    order: list[str] = []
    for part in rest.split(","):
        if part:
            k, _, v = part.partition("=")
            kv[k] = v
            order.append(k)
    src = int(kv.pop("src"))
    if kind == "noise":
        return Packet.noise(src)
    if kind == "coded":
        return Packet.coded(src, int(kv["gen"]), int(kv["c"], 16), int(kv["w"]), int(kv["b"], 16))
    if kind == "data":
        body = int(kv.pop("b"), 16)
        return Packet.data(src, body, **{k: int(v) for k, v in kv.items()})
    if kind == "control":
        tag = kv.pop("tag")
        return Packet.control(src, tag, **{k: int(v) for k, v in kv.items()})
    raise ValueError(f"unknown packet kind in {text!r}")


class Signal(Enum):
    SILENCE = "silence"
    COLLISION = "collision"


SILENCE = Signal.SILENCE
COLLISION = Signal.COLLISION
Outcome = Union[Packet, Signal]


def resolve_round(transmitters: Mapping[int, Packet], g: Graph, cd: bool) -> dict[int, Outcome]:
    """Outcome for every node that is not transmitting this round."""
    heard = resolve_sparse(transmitters, g, cd)
    return {v: heard.get(v, SILENCE) for v in range(g.n) if v not in transmitters}


def resolve_sparse(transmitters: Mapping[int, Packet], g: Graph, cd: bool) -> dict[int, Outcome]:
    """Like :func:`resolve_round` but omits silent listeners."""
    count: dict[int, int] = {}
    last: dict[int, int] = {}
    for u in transmitters:
        for v in g.nbrs[u]:
            if v in transmitters:
                continue
            count[v] = count.get(v, 0) + 1
            last[v] = u
    out: dict[int, Outcome] = {}
    for v, c in count.items():
        if c == 1:
            out[v] = transmitters[last[v]]
        elif cd:
            out[v] = COLLISION
    return out


# -- counter-based randomness --------------------------------------------------

_M = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_NODE_MUL = 0xD6E8FEB86659FD93
_ROUND_MUL = 0xA0761D6478BD642F


def _mix(x: int) -> int:
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M
    return x ^ (x >> 31)


def _mix_np(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class NodeRng:
    """The private random stream of one node."""

    __slots__ = ("node", "key")

    def __init__(self, seed: int, node: int):
        self.node = node
        base = _mix((seed * _GOLDEN + 0x632BE59BD9B4E019) & _M)
        self.key = _mix(base ^ (((node + 1) * _NODE_MUL) & _M))

    def word(self, rnd: int, salt: int = 0) -> int:
        return _mix((_mix(self.key ^ ((rnd * _ROUND_MUL) & _M)) + salt * _GOLDEN) & _M)

    def random(self, rnd: int, salt: int = 0) -> float:
        return (self.word(rnd, salt) >> 11) * (1.0 / (1 << 53))

    def coin(self, rnd: int, exponent: int, salt: int = 0) -> bool:
        """True with probability exactly ``2**-exponent``."""
        if exponent <= 0:
            return True
        if exponent >= 64:
            return False
        return self.word(rnd, salt) >> (64 - exponent) == 0

    def bits(self, rnd: int, nbits: int, salt: int = 0) -> int:
        out, got, i = 0, 0, 0
        while got < nbits:
            out |= self.word(rnd, salt * 64 + 1_000_003 + i) << got
            got += 64
            i += 1
        return out & ((1 << nbits) - 1)


class Streams:
    """All node streams of one run, with vectorized draws for hot loops."""

    def __init__(self, seed: int):
        self.seed = seed
        self._nodes: dict[int, NodeRng] = {}

    def node(self, v: int) -> NodeRng:
        r = self._nodes.get(v)
        if r is None:
            r = self._nodes[v] = NodeRng(self.seed, v)
        return r

    def keys(self, nodes: Sequence[int]) -> np.ndarray:
        return np.fromiter((self.node(v).key for v in nodes), dtype=np.uint64, count=len(nodes))

    def words(self, keys: np.ndarray, rnd: int, salt: int = 0) -> np.ndarray:
        x = _mix_np(keys ^ np.uint64((rnd * _ROUND_MUL) & _M))
        return _mix_np(x + np.uint64((salt * _GOLDEN) & _M))

    def coins(self, keys: np.ndarray, rnd: int, exponents: np.ndarray | int, salt: int = 0) -> np.ndarray:
        """Vector form of :meth:`NodeRng.coin`."""
        w = self.words(keys, rnd, salt)
        e = np.broadcast_to(np.asarray(exponents, dtype=np.int64), w.shape)
        shift = np.clip(64 - e, 0, 63).astype(np.uint64)
        hit = (w >> shift) == 0
        return np.where(e <= 0, True, np.where(e >= 64, False, hit))


# -- traces -------------------------------------------------------------------

Record = tuple[int, int, Union[Packet, None], Union[Outcome, None]]
EMPTY_TRACE_DIGEST = hashlib.sha256(b"").hexdigest()


@dataclass
class Trace:
    """Per-round records ``(round, node, transmitted packet | None, outcome | None)``.

    ``events`` traces keep transmissions and non-silent receptions;
    ``full`` traces also keep one silence record per idle listener.
    """

    n: int
    rounds: int = 0
    records: list[Record] = field(default_factory=list)
    level: str = "events"

    def lines(self, include_silence: bool = False) -> Iterator[str]:
        for rnd, node, pkt, out in self.records:
            if pkt is not None:
                yield f"{rnd} {node} transmit - {pkt.summary()}"
            elif isinstance(out, Packet):
                yield f"{rnd} {node} listen received {out.summary()}"
            elif out is COLLISION:
                yield f"{rnd} {node} listen collision"
            elif include_silence:
                yield f"{rnd} {node} listen silence"

    def export(self) -> str:
        head = f"# trace n={self.n} rounds={self.rounds} level={self.level}"
        return "\n".join([head, *self.lines(include_silence=True)]) + "\n"

    def transmissions(self) -> dict[int, dict[int, Packet]]:
        out: dict[int, dict[int, Packet]] = {}
        for rnd, node, pkt, _ in self.records:
            if pkt is not None:
                out.setdefault(rnd, {})[node] = pkt
        return out

    def receptions(self) -> Iterator[tuple[int, int, Packet]]:
        for rnd, node, pkt, out in self.records:
            if pkt is None and isinstance(out, Packet):
                yield rnd, node, out


def parse_trace(text: str) -> Trace:
    n = rounds = 0
    level = "events"
    records: list[Record] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "n":
                    n = int(val)
                elif key == "rounds":
                    rounds = int(val)
                elif key == "level":
                    level = val
            continue
        parts = line.split()
        rnd, node, action = int(parts[0]), int(parts[1]), parts[2]
        if action == "transmit":
            records.append((rnd, node, parse_packet(parts[4]), None))
        elif parts[3] == "received":
            records.append((rnd, node, None, parse_packet(parts[4])))
        elif parts[3] == "collision":
            records.append((rnd, node, None, COLLISION))
        else:
            records.append((rnd, node, None, SILENCE))
    return Trace(n, rounds, records, level)


def trace_hash(trace: Trace) -> str:
    """SHA-256 over the canonical event lines; the empty trace hashes to :data:`EMPTY_TRACE_DIGEST`."""
    h = hashlib.sha256()
    for line in trace.lines():
        h.update(line.encode())
        h.update(b"\n")
    if trace.rounds:
        h.update(f"end {trace.rounds}\n".encode())
    return h.hexdigest()


# -- channel and lanes ---------------------------------------------------------


class BudgetExhausted(RuntimeError):
    def __init__(self, rnd: int, budget: int):
        super().__init__(f"round {rnd} exceeds the budget of {budget} rounds")
        self.round = rnd
        self.budget = budget


class InterferenceError(RuntimeError):
    """Two lanes sharing a round disturbed each other; a scheduling bug."""


class Channel:
    """Shared radio medium for protocol drivers; see the module docstring."""

    def __init__(self, graph: Graph, *, collision_detection: bool = True, seed: int = 0,
                 max_rounds: int = 10**9, trace_level: str = "events"):
        self.graph = graph
        self.cd = collision_detection
        self.max_rounds = max_rounds
        self.trace_level = trace_level
        self.streams = Streams(seed)
        self.horizon = 0
        self._tx: dict[int, dict[int, Packet]] = {}
        self._heard: dict[int, dict[int, Outcome]] = {}

    def claim(self, rnd: int) -> None:
        if rnd > self.max_rounds:
            raise BudgetExhausted(rnd, self.max_rounds)
        if rnd > self.horizon:
            self.horizon = rnd

    def step(self, rnd: int, tx: Mapping[int, Packet],
             listeners: Container[int] | None = None) -> dict[int, Outcome]:
        """Submit the transmitters of global round ``rnd``.

        Returns the non-silent outcomes, restricted to ``listeners`` when
        given. Only returned outcomes are later cross-checked against the
        full round, so drivers should name the nodes they act upon.
        """
        self.claim(rnd)
        if not tx:
            return {}
        slot = self._tx.setdefault(rnd, {})
        for u, pkt in tx.items():
            if u in slot:
                raise InterferenceError(f"node {u} transmits twice in round {rnd}")
            slot[u] = pkt
        heard = resolve_sparse(tx, self.graph, self.cd)
        if listeners is not None:
            heard = {v: o for v, o in heard.items() if v in listeners}
        if heard:
            seen = self._heard.setdefault(rnd, {})
            for v, o in heard.items():
                if v in seen:
                    raise InterferenceError(f"node {v} hears two lanes in round {rnd}")
                seen[v] = o
        return heard

    def lane(self, start: int = 0, stride: int = 1) -> "Lane":
        return Lane(self, start, stride)

    def trace(self) -> Trace:
        """Rebuild the trace from all transmissions and check lane isolation."""
        recs: list[Record] = []
        for rnd in sorted(self._tx):
            tx = self._tx[rnd]
            heard = resolve_sparse(tx, self.graph, self.cd)
            for v, seen in self._heard.get(rnd, {}).items():
                if heard.get(v, SILENCE) is not seen:
                    raise InterferenceError(f"node {v} in round {rnd}: lanes overlapped")
            if self.trace_level == "full":
                for v in range(self.graph.n):
                    if v in tx:
                        recs.append((rnd, v, tx[v], None))
                    else:
                        recs.append((rnd, v, None, heard.get(v, SILENCE)))
                continue
            for v in sorted(set(tx) | set(heard)):
                if v in tx:
                    recs.append((rnd, v, tx[v], None))
                else:
                    recs.append((rnd, v, None, heard[v]))
        return Trace(self.graph.n, self.horizon, recs, self.trace_level)


class Lane:
    """A protocol's private clock: local round ``x`` is global round ``start + stride * x``."""

    __slots__ = ("channel", "start", "stride", "clock")

    def __init__(self, channel: Channel, start: int, stride: int):
        self.channel = channel
        self.start = start
        self.stride = stride
        self.clock = 0

    @property
    def now(self) -> int:
        """Global index of the most recent local round."""
        return self.start + self.stride * self.clock

    def at(self, local: int) -> int:
        return self.start + self.stride * local

    def step(self, tx: Mapping[int, Packet], listeners: Container[int] | None = None) -> dict[int, Outcome]:
        self.clock += 1
        return self.channel.step(self.now, tx, listeners)

    def idle(self, rounds: int) -> None:
        if rounds > 0:
            self.clock += rounds
            self.channel.claim(self.now)

    def sub(self, stride: int = 1, phase: int = 0) -> "Lane":
        """Child lane starting after the current clock; it owns local rounds
        ``clock + phase + 1 + stride * j`` of this lane for ``j = 0, 1, ...``."""
        return Lane(self.channel, self.at(self.clock + phase + 1 - stride), self.stride * stride)

    def join(self, *children: "Lane") -> None:
        """Advance past every round used by ``children``."""
        end = max((c.now for c in children), default=self.now)
        if end > self.now:
            local = -(-(end - self.start) // self.stride)
            self.clock = local
            self.channel.claim(self.now)

    def rng(self, node: int) -> NodeRng:
        return self.channel.streams.node(node)

    @property
    def streams(self) -> Streams:
        return self.channel.streams


# -- program-driven engine -----------------------------------------------------


class Program:
    """Per-node protocol: decides an action each round from local state only."""

    node: int = -1
    rng: NodeRng

    def bind(self, node: int, rng: NodeRng) -> None:
        self.node = node
        self.rng = rng

    def on_round(self, t: int) -> Packet | None:
        return None

    def on_outcome(self, t: int, outcome: Outcome) -> None:
        pass

    def done(self) -> bool:
        return True


@dataclass(frozen=True)
class EngineConfig:
    collision_detection: bool = True
    seed: int = 0
    max_rounds: int = 100_000
    trace_level: str = "events"

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")
        if self.trace_level not in ("events", "full"):
            raise ValueError(f"unknown trace level {self.trace_level!r}")


@dataclass
class RunResult:
    trace: Trace
    rounds: int
    exhausted: bool

    @property
    def completed(self) -> bool:
        return not self.exhausted


def run(programs: Sequence[Program], g: Graph, cfg: EngineConfig) -> RunResult:
    if len(programs) != g.n:
        raise ValueError(f"need one program per node: {len(programs)} for {g.n} nodes")
    streams = Streams(cfg.seed)
    for v, prog in enumerate(programs):
        prog.bind(v, streams.node(v))
    trace = Trace(g.n, 0, [], cfg.trace_level)
    t = 0
    while not all(p.done() for p in programs):
        if t == cfg.max_rounds:
            return RunResult(trace, t, True)
        t += 1
        tx: dict[int, Packet] = {}
        for v, prog in enumerate(programs):
            pkt = prog.on_round(t)
            if pkt is not None:
                tx[v] = pkt
        outcomes = resolve_round(tx, g, cfg.collision_detection)
        for v in range(g.n):
            if v in tx:
                trace.records.append((t, v, tx[v], None))
            else:
                out = outcomes[v]
                if out is not SILENCE or cfg.trace_level == "full":
                    trace.records.append((t, v, None, out))
                programs[v].on_outcome(t, out)
        trace.rounds = t
    return RunResult(trace, t, False)


def replay_outcomes(trace: Trace, g: Graph, cd: bool) -> list[str]:
    """Recount transmitting neighbors for every record; returns mismatch descriptions."""
    problems = []
    by_round = trace.transmissions()
    for rnd, node, pkt, out in trace.records:
        tx = by_round.get(rnd, {})
        if pkt is not None:
            continue
        if node in tx:
            problems.append(f"round {rnd}: node {node} both transmits and listens")
            continue
        senders = [u for u in g.nbrs[node] if u in tx]
        if len(senders) == 1:
            expect: Outcome = tx[senders[0]]
        elif len(senders) >= 2 and cd:
            expect = COLLISION
        else:
            expect = SILENCE
        if expect != out:
            problems.append(f"round {rnd}: node {node} recorded {out} but {len(senders)} neighbors sent")
    return problems


def salt_of(*parts: Iterable[int] | int | str) -> int:
    """Stable small integer for naming a sub-protocol's draws."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=4).digest()
    return int.from_bytes(h, "big") & 0xFFFFF
