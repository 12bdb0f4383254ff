"""Collect scattered messages at the root of a BFS tree.

Every message is copied ``(c+1) log n`` times and each copy gets its own
random delay ``t``. The origin sends a copy in round ``3t + 1`` addressed
to its parent. A node that hears a copy addressed to itself forwards it
in the next round, readdressed to its own parent. Copies therefore reach
the root at round ``3t + depth`` unless they meet another copy on the way.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .engine import COLLISION, Channel, EngineConfig, Kind, Packet, Trace
from .graph import Graph, bfs_layering, bfs_tree, clog2


class GatherError(ValueError):
    pass


@dataclass(frozen=True)
class Copy:
    ident: int
    message: int
    origin: int
    delay: int
    depth: int

    @property
    def dist(self) -> int:
        """Round at which the copy reaches the root when nothing gets in its way."""
        return 3 * self.delay + self.depth


@dataclass
class GatherPlan:
    root: int
    parent: dict[int, int | None]
    depth: dict[int, int]
    c: int
    k: int
    copies: list[Copy]

    @property
    def max_delay(self) -> int:
        return max_delay(self.k, len(self.depth), self.c)

    def round_cap(self) -> int:
        return max(self.depth.values()) + 30 * (self.c + 1) * self.k * clog2(len(self.depth))


def max_delay(k: int, n: int, c: int) -> int:
    return 10 * (c + 1) * k * clog2(n)


def check_tree(g: Graph, root: int, parent: Mapping[int, int | None]) -> dict[int, int]:
    """Depth of every node, or :class:`GatherError` unless ``parent`` is a BFS tree of ``g`` at ``root``."""
    if set(parent) != set(range(g.n)):
        raise GatherError("parent map must cover every node")
    if parent[root] is not None:
        raise GatherError("the root has a parent")
    level = bfs_layering(g, root).level
    for v, p in parent.items():
        if v == root:
            continue
        if p is None or p not in g.nbrs[v] or level[p] != level[v] - 1:
            raise GatherError(f"node {v}: parent {p} is not a BFS parent")
    return {v: level[v] for v in range(g.n)}


def make_plan(g: Graph, origins: Sequence[int], *, c: int = 1, seed: int = 0, root: int = 0,
              parent: Mapping[int, int | None] | None = None) -> GatherPlan:
    """Copies and delays for messages ``0..k-1`` held by ``origins[i]``.

    Delays of one message's copies are drawn without replacement.
    """
    k = len(origins)
    if k == 0:
        raise GatherError("no messages")
    if k > g.n ** 2:
        raise GatherError("more than n^2 messages")
    if c < 0:
        raise GatherError("c must be non-negative")
    for u in origins:
        if not 0 <= u < g.n:
            raise GatherError(f"origin {u} is not a node")
    if not 0 <= root < g.n:
        raise GatherError(f"root {root} is not a node")
    parent = dict(bfs_tree(g, root) if parent is None else parent)
    parent.setdefault(root, None)
    depth = check_tree(g, root, parent)
    L = clog2(g.n)
    top = max_delay(k, g.n, c)
    per = (c + 1) * L
    copies = []
    for i, u in enumerate(origins):
        rng = random.Random(f"gather/{seed}/{u}/{i}")
        for t in rng.sample(range(1, top + 1), min(per, top)):
            copies.append(Copy(len(copies), i, u, t, depth[u]))
    return GatherPlan(root, parent, depth, c, k, copies)


@dataclass
class GatherResult:
    received: dict[int, int]                   # message -> first round it reached the root
    completion_round: int | None
    last_round: int
    arrivals: dict[int, int] = field(default_factory=dict)   # copy -> round it reached the root
    suppressed: list[tuple[int, int]] = field(default_factory=list)   # (node, round) with several packets due
    channel: Channel | None = None

    def trace(self) -> Trace:
        return self.channel.trace()

    def all_received(self, k: int) -> bool:
        return len(self.received) == k


def _packet(u: int, cp: Copy, to: int) -> Packet:
    return Packet.data(u, cp.message, msg=cp.message, copy=cp.ident, to=to)


def gathering_algorithm(g: Graph, plan: GatherPlan, cfg: EngineConfig) -> GatherResult:
    cap = plan.round_cap()
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=max(cap, 1), trace_level=cfg.trace_level)
    root, parent = plan.root, plan.parent
    due: dict[int, dict[int, list[Copy]]] = defaultdict(lambda: defaultdict(list))
    received: dict[int, int] = {}
    arrivals: dict[int, int] = {}
    for cp in plan.copies:
        if cp.origin == root:
            received.setdefault(cp.message, 0)
            continue
        due[3 * cp.delay + 1][cp.origin].append(cp)
    by_id = {cp.ident: cp for cp in plan.copies}
    res = GatherResult(received, None, 0, arrivals, channel=ch)
    while due:
        rnd = min(due)
        slot = due.pop(rnd)
        tx = {}
        for u, cps in slot.items():
            if len(cps) == 1:
                tx[u] = _packet(u, cps[0], parent[u])
            else:
                res.suppressed.append((u, rnd))
        if not tx:
            continue
        heard = ch.step(rnd, tx)
        res.last_round = rnd
        for w, o in heard.items():
            if not isinstance(o, Packet) or o.get("to") != w:
                continue
            cp = by_id[o.get("copy")]
            if w == root:
                arrivals.setdefault(cp.ident, rnd)
                received.setdefault(cp.message, rnd)
            else:
                due[rnd + 1][w].append(cp)
    if len(received) == plan.k:
        res.completion_round = max(received.values())
    return res


# -- replay checks ------------------------------------------------------------------------


def trajectory_violations(plan: GatherPlan, res: GatherResult) -> list[str]:
    """Copies that reached the root at a round other than ``3t + depth``."""
    by_id = {cp.ident: cp for cp in plan.copies}
    return [f"copy {i} arrived at {r}, expected {by_id[i].dist}"
            for i, r in sorted(res.arrivals.items()) if r != by_id[i].dist]


def conflict_violations(g: Graph, plan: GatherPlan, trace: Trace) -> list[str]:
    """Lost copies whose competitors were more than two rounds of ``dist`` away.

    A copy is lost at node ``w`` when it was addressed to ``w`` and ``w``
    was transmitting itself or did not hear it. Every other copy sent in
    that round by ``w`` or a neighbor of ``w`` counts as a competitor.
    """
    by_id = {cp.ident: cp for cp in plan.copies}
    tx = trace.transmissions()
    outcome = {(r, v): o for r, v, sent, o in trace.records if sent is None}
    out = []
    for rnd, senders in sorted(tx.items()):
        for u, pkt in senders.items():
            if pkt.kind is not Kind.DATA or pkt.get("to") is None:
                continue
            w = pkt.get("to")
            o = outcome.get((rnd, w))
            if isinstance(o, Packet) and o.src == u:
                continue
            mine = by_id[pkt.get("copy")]
            for x in (w, *g.nbrs[w]):
                other = senders.get(x)
                if x == u or other is None or other.get("copy") is None:
                    continue
                theirs = by_id[other.get("copy")]
                if abs(mine.dist - theirs.dist) > 2:
                    out.append(f"round {rnd} at {w}: copies {mine.ident} and {theirs.ident} "
                               f"with dist {mine.dist} and {theirs.dist}")
            if o is not COLLISION and not isinstance(o, Packet) and w not in senders:
                out.append(f"round {rnd}: copy {mine.ident} to {w} vanished")
    return out
