"""Gathering spanning trees: ranking, oracle, validator, distributed construction.

A GST is stored per node as level, rank, parent, the rank the node
believes its parent has, and (optionally) its virtual distance. Labels
may describe a forest: every root sits at level 0 and acts as a source.
This is how each ring of the unknown-topology pipelines gets its own tree.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .config import DEFAULT, Constants
from .engine import Channel, EngineConfig, Lane, Packet, Trace, salt_of
from .graph import Graph, bfs_layering, clog2
from .primitives import ChildClass, decay, recruit, recruit_length


class GstError(ValueError):
    pass


# -- labels ----------------------------------------------------------------------


@dataclass
class GstLabels:
    level: dict[int, int]
    rank: dict[int, int]
    parent: dict[int, int | None]
    parent_rank: dict[int, int | None]
    roots: tuple[int, ...]
    vdist: dict[int, int] | None = None

    @classmethod
    def from_tree(cls, level: Mapping[int, int], rank: Mapping[int, int],
                  parent: Mapping[int, int | None], roots: Iterable[int]) -> "GstLabels":
        par = {v: parent.get(v) for v in level}
        prank = {v: (rank[p] if p is not None else None) for v, p in par.items()}
        return cls(dict(level), dict(rank), par, prank, tuple(sorted(roots)))

    @property
    def nodes(self) -> list[int]:
        return sorted(self.level)

    @property
    def source(self) -> int:
        if len(self.roots) != 1:
            raise GstError("forest labels have no single source")
        return self.roots[0]

    def stretch_start(self, v: int) -> bool:
        return self.parent[v] is None or self.rank[v] != self.parent_rank[v]

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for v, p in self.parent.items():
            if p is not None:
                out[p].append(v)
        return out

    def fast_parents(self) -> set[int]:
        """Nodes with a child of their own rank: the ones that relay along a stretch."""
        return {p for v, p in self.parent.items() if p is not None and self.rank[v] == self.rank[p]}

    def depth(self) -> int:
        return max(self.level.values())

    def export(self) -> str:
        lines = []
        for v in self.nodes:
            p = self.parent[v]
            pr = self.parent_rank[v]
            d = self.vdist.get(v) if self.vdist is not None else None
            lines.append(" ".join(str(x) for x in (
                v, self.level[v], self.rank[v], "-" if p is None else p, "-" if pr is None else pr,
                int(self.stretch_start(v)), "-" if d is None else d)))
        return "\n".join(lines) + "\n"


def parse_labels(text: str) -> GstLabels:
    level, rank, parent, prank, vd = {}, {}, {}, {}, {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise GstError(f"line {no}: expected 7 fields, got {len(parts)}")
        v = int(parts[0])
        level[v], rank[v] = int(parts[1]), int(parts[2])
        parent[v] = None if parts[3] == "-" else int(parts[3])
        prank[v] = None if parts[4] == "-" else int(parts[4])
        if parts[6] != "-":
            vd[v] = int(parts[6])
    roots = tuple(sorted(v for v, p in parent.items() if p is None))
    return GstLabels(level, rank, parent, prank, roots, vd or None)


# -- ranking ---------------------------------------------------------------------


def rank_rule(child_ranks: Iterable[int]) -> int:
    ranks = list(child_ranks)
    if not ranks:
        return 1
    top = max(ranks)
    return top if ranks.count(top) == 1 else top + 1


def compute_ranks(parent: Mapping[int, int | None]) -> dict[int, int]:
    """Ranks of every node of a rooted forest given as a parent map."""
    children: dict[int, list[int]] = defaultdict(list)
    roots = []
    for v, p in parent.items():
        if p is None:
            roots.append(v)
        else:
            if p not in parent:
                raise GstError(f"parent {p} of node {v} is not in the tree")
            children[p].append(v)
    order: list[int] = []
    queue = deque(roots)
    while queue:
        v = queue.popleft()
        order.append(v)
        queue.extend(children[v])
    if len(order) != len(parent):
        stuck = sorted(set(parent) - set(order))
        raise GstError(f"parent map has a cycle through {stuck[:6]}")
    rank: dict[int, int] = {}
    for v in reversed(order):
        rank[v] = rank_rule(rank[c] for c in children[v])
    return rank


# -- centralized oracle ----------------------------------------------------------


def gst_oracle_forest(g: Graph, level: Mapping[int, int], roots: Iterable[int]) -> GstLabels:
    """Deterministic GST forest over the nodes of ``level``.

    Per level pair, deepest first, and per blue rank from high to low:
    first hand every group of two or more unassigned equal-rank blues to a
    common red (which then outranks them), then give each remaining blue
    its lowest-ID red neighbor.
    """
    layers: dict[int, list[int]] = defaultdict(list)
    for v, l in level.items():
        layers[l].append(v)
    depth = max(layers)
    rank: dict[int, int] = {v: 1 for v in layers[depth]}
    parent: dict[int, int | None] = {v: None for v in roots}
    for l in range(depth, 0, -1):
        blues = sorted(layers[l])
        reds = sorted(layers[l - 1])
        kids: dict[int, list[int]] = defaultdict(list)
        for i in range(max(rank[b] for b in blues), 0, -1):
            open_blues = {b for b in blues if rank[b] == i}
            grabbed = True
            while grabbed:
                grabbed = False
                for v in reds:
                    mine = [b for b in g.nbrs[v] if b in open_blues]
                    if len(mine) >= 2:
                        for b in mine:
                            parent[b] = v
                            kids[v].append(b)
                            open_blues.discard(b)
                        grabbed = True
                        break
            for b in sorted(open_blues):
                v = min(x for x in g.nbrs[b] if level.get(x) == l - 1)
                parent[b] = v
                kids[v].append(b)
        for v in reds:
            rank[v] = rank_rule(rank[c] for c in kids[v])
    for v in level:
        parent.setdefault(v, None)
    return GstLabels.from_tree(level, rank, parent, roots)


def build_gst_oracle(g: Graph, source: int) -> GstLabels:
    level = bfs_layering(g, source).level
    labels = gst_oracle_forest(g, dict(enumerate(level)), [source])
    labels.vdist = virtual_distances(g, labels)
    return labels


# -- validation ------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    clause: str
    nodes: tuple[int, ...]
    detail: str

    def __str__(self) -> str:
        return f"{self.clause} at {list(self.nodes)}: {self.detail}"


@dataclass
class GstReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def clauses(self) -> set[str]:
        return {v.clause for v in self.violations}

    def __str__(self) -> str:
        return "ok" if self.ok else "\n".join(map(str, self.violations))


def validate_gst(g: Graph, labels: GstLabels, *, n: int | None = None) -> GstReport:
    """Check structure, ranking rule, rank bound and pairwise collision-freeness.

    The collision clause: for tree edges ``u1->v1`` and ``u2->v2`` between
    the same two levels, all four nodes of one rank ``r`` and ``v1 != v2``,
    ``v1`` must not be adjacent to ``u2``. Virtual distances are not checked.
    """
    rep = GstReport()
    bad = rep.violations.append
    L = clog2(n or g.n)
    lv, rank, parent = labels.level, labels.rank, labels.parent
    for v in labels.nodes:
        if not 0 <= v < g.n:
            bad(Violation("structure", (v,), "node outside the graph"))
            return rep
    for v in labels.nodes:
        p = parent[v]
        if p is None:
            if v not in labels.roots or lv[v] != 0:
                bad(Violation("structure", (v,), "parentless node is not a level-0 root"))
            continue
        if p not in lv:
            bad(Violation("structure", (v, p), "parent is not labeled"))
        elif p not in g.adj[v]:
            bad(Violation("structure", (v, p), "parent is not a neighbor"))
        elif lv[p] != lv[v] - 1:
            bad(Violation("structure", (v, p), f"parent level {lv[p]} != {lv[v] - 1}"))
        for w in g.nbrs[v]:
            if w in lv and abs(lv[w] - lv[v]) > 1:
                bad(Violation("level", (v, w), "adjacent nodes more than one level apart"))
    if rep.violations:
        return rep
    try:
        expect = compute_ranks(parent)
    except GstError as exc:
        bad(Violation("structure", (), str(exc)))
        return rep
    for v in labels.nodes:
        if expect[v] != rank[v]:
            bad(Violation("ranking-rule", (v,), f"rank {rank[v]} but children imply {expect[v]}"))
        if not 1 <= rank[v] <= L:
            bad(Violation("rank-bound", (v,), f"rank {rank[v]} outside [1, {L}]"))
        p = parent[v]
        if p is not None and labels.parent_rank[v] != rank[p]:
            bad(Violation("parent-rank", (v, p), f"node believes {labels.parent_rank[v]}, parent has {rank[p]}"))
    fast = labels.fast_parents()
    for u in labels.nodes:
        p = parent[u]
        if p is None or rank[p] != rank[u]:
            continue
        for x in g.nbrs[u]:
            if x != p and x in fast and lv.get(x) == lv[u] - 1 and rank[x] == rank[u]:
                bad(Violation("collision-free", (u, p, x),
                              f"rank-{rank[u]} child {u} is adjacent to another rank-{rank[u]} parent {x}"))
    return rep


# -- virtual distances -----------------------------------------------------------


def fast_edges(labels: GstLabels) -> dict[int, list[int]]:
    """Stretch start -> the rest of its fast stretch."""
    kids = labels.children()
    out: dict[int, list[int]] = {}
    for u in labels.nodes:
        if not labels.stretch_start(u):
            continue
        chain, cur = [], u
        while True:
            nxt = [c for c in kids.get(cur, ()) if labels.rank[c] == labels.rank[u]]
            if not nxt:
                break
            cur = nxt[0]
            chain.append(cur)
        if chain:
            out[u] = chain
    return out


def virtual_distances(g: Graph, labels: GstLabels) -> dict[int, int]:
    """BFS distances from the roots in G restricted to the labeled nodes plus fast edges."""
    fe = fast_edges(labels)
    dist = {r: 0 for r in labels.roots}
    queue = deque(labels.roots)
    while queue:
        u = queue.popleft()
        for w in (*g.nbrs[u], *fe.get(u, ())):
            if w in labels.level and w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def vdist_length(depth: int, L: int, consts: Constants = DEFAULT) -> int:
    return 2 * L * (L * 2 * (depth + 1) + consts.decay_whp_factor * L * L)


def vdist_on_lane(lane: Lane, labels: GstLabels, L: int, consts: Constants = DEFAULT, *,
                  depth: int | None = None) -> dict[int, int]:
    """Distributed virtual distances; uses exactly ``vdist_length(depth)`` rounds.

    ``depth`` is the nominal depth that fixes the schedule length; it
    defaults to the labels' own depth.

    Recursion ``d`` hands label ``d + 1`` first along the fast stretches
    that start at nodes labeled ``d`` (a two-epoch sweep per rank: stretch
    starts fire, then freshly reached stretch members relay), then to
    every neighbor of a ``d``-labeled node through Decay.
    """
    nodes = labels.nodes
    if depth is None:
        depth = labels.depth()
    phases = consts.decay_whp_factor * L
    relays = labels.fast_parents()
    lv, rank, parent = labels.level, labels.rank, labels.parent
    d_of: dict[int, int] = {r: 0 for r in labels.roots}
    by_level_rank: dict[tuple[int, int], list[int]] = defaultdict(list)
    for v in nodes:
        by_level_rank[lv[v], rank[v]].append(v)
    salt = salt_of("vdist")
    for d in range(2 * L):
        frontier = [v for v in nodes if d_of.get(v) == d]
        starts = {v for v in frontier if labels.stretch_start(v) and v in relays}
        for r in range(1, L + 1):
            reached: set[int] = set()
            for epoch in (1, 2):
                for ell in range(depth + 1):
                    pool = starts if epoch == 1 else reached
                    tx_nodes = [v for v in by_level_rank.get((ell, r), ()) if v in pool and v in relays]
                    if not tx_nodes:
                        lane.idle(1)
                        continue
                    members = {c for c in by_level_rank.get((ell + 1, r), ())
                               if labels.parent_rank[c] == r and not labels.stretch_start(c)}
                    heard = lane.step({v: Packet.control(v, "vd-fast", d=d) for v in tx_nodes}, members)
                    for c, o in heard.items():
                        if isinstance(o, Packet) and o.src == parent[c]:
                            reached.add(c)
                            d_of.setdefault(c, d + 1)
        unlabeled = {v for v in nodes if v not in d_of}

        def label(h):
            for v, o in h.items():
                if isinstance(o, Packet):
                    d_of.setdefault(v, d + 1)

        decay(lane, frontier, lambda v: Packet.control(v, "vd-decay", d=d), phases, L,
              listeners=unlabeled, salt=salt + d, on_heard=label)
    return d_of


def virtual_distances_distributed(g: Graph, labels: GstLabels, cfg: EngineConfig,
                                  consts: Constants = DEFAULT) -> tuple[dict[int, int], Trace]:
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=cfg.max_rounds, trace_level=cfg.trace_level)
    d = vdist_on_lane(ch.lane(), labels, clog2(g.n), consts)
    return d, ch.trace()


# -- distributed construction ------------------------------------------------------


@dataclass
class AssignmentState:
    """Knowledge accumulated by the nodes of one level pair."""

    rank: dict[int, int]              # known ranks (blues: final; reds: once marked)
    parent: dict[int, int]
    parent_rank: dict[int, int]
    has_child: set[int] = field(default_factory=set)
    failures: list[str] = field(default_factory=list)


def assignment_lengths(L: int, consts: Constants = DEFAULT) -> tuple[int, int, int]:
    """(identification, epoch, whole rank slot) lengths in rounds."""
    P = consts.decay_whp_factor * L
    iters = consts.recruit_iterations_factor * L * L
    ident = P * L
    epoch = 1 + P * L + 3 * recruit_length(L, iters, consts.recruit_reply_phases) + P * L
    return ident, epoch, ident + consts.assignment_epoch_factor * L * epoch


def assign_rank(lane: Lane, g: Graph, reds: list[int], blues: list[int], i: int, st: AssignmentState,
                L: int, consts: Constants = DEFAULT, *, salt: int = 0) -> None:
    """Bipartite assignment of the rank-``i`` blues; uses exactly one rank slot.

    ``st.rank`` must hold the final rank of every blue of rank ``>= i``.
    Reds already holding a rank sit out.
    """
    P = consts.decay_whp_factor * L
    iters = consts.recruit_iterations_factor * L * L
    ident_len, epoch_len, slot_len = assignment_lengths(L, consts)
    start = lane.clock
    todo = {b for b in blues if st.rank.get(b) == i and b not in st.parent}
    unranked = {v for v in reds if v not in st.rank}
    active: set[int] = set()

    def identify(h):
        active.update(v for v, o in h.items() if isinstance(o, Packet))

    decay(lane, todo, lambda b: Packet.control(b, "ba-id", rank=i), P, L, listeners=unranked,
          salt=salt + 1, on_heard=identify)
    closed: set[int] = set()       # reds that are done with rank i
    for epoch in range(consts.assignment_epoch_factor * L):
        live = active - closed
        if not live or not todo:
            lane.idle(epoch_len)
            continue
        e0 = lane.clock
        # Stage I: loners hear exactly one active red
        heard = lane.step({v: Packet.control(v, "ba-red") for v in sorted(live)}, todo)
        loners = {b for b, o in heard.items() if isinstance(o, Packet)}
        loner_parents: set[int] = set()
        decay(lane, loners, lambda b: Packet.control(b, "ba-loner"), P, L, listeners=live,
              salt=salt + 2, on_heard=lambda h: loner_parents.update(
                  v for v, o in h.items() if isinstance(o, Packet)))
        # Stage II
        coin_round = lane.at(lane.clock + 1)
        others = sorted(live - loner_parents)
        if others:
            flips = lane.streams.coins(lane.streams.keys(others), coin_round, 1, salt + 3)
        else:
            flips = np.zeros(0, dtype=bool)
        brisk = {v for v, f in zip(others, flips) if f}
        lazy = set(others) - brisk
        classes: dict[int, ChildClass] = {}
        permanent: dict[int, int] = {}
        pool = set(todo)
        for part, part_reds in enumerate((loner_parents, brisk, lazy), 1):
            res = recruit(lane, part_reds, pool, L, iters, reply_phases=consts.recruit_reply_phases,
                          salt=salt + 10 + part, tag=f"ba{part}")
            for v in part_reds:
                classes[v] = res.red_child_class[v]
            for b, v in res.parent.items():
                pool.discard(b)
                known = res.blue_knows_class.get(b)
                if known is None:
                    st.failures.append(f"blue {b} missed its parent's class at rank {i}")
                    known = res.red_child_class[v]
                if part == 1 or known is ChildClass.TWO_PLUS:
                    permanent[b] = v
        # Stage III
        marked = set(loner_parents) | {v for v in brisk | lazy if classes[v] is not ChildClass.ONE}
        new_rank = {}
        for v in marked:
            c = classes[v]
            if c is ChildClass.ONE:
                new_rank[v] = i
            elif c is ChildClass.TWO_PLUS:
                new_rank[v] = i + 1
        for b, v in permanent.items():
            if v in new_rank:
                st.parent[b] = v
                st.parent_rank[b] = new_rank[v]
                todo.discard(b)
            else:
                st.failures.append(f"blue {b} kept a parent {v} that took no rank")
        for v, r in new_rank.items():
            st.rank[v] = r
            st.has_child.add(v)
        closed |= marked
        lower = {b for b in blues if b not in st.parent and st.rank.get(b, 0) < i}

        def adopt(h):
            for b, o in h.items():
                if isinstance(o, Packet) and b not in st.parent:
                    st.parent[b] = o.src
                    st.parent_rank[b] = o.get("rank")

        decay(lane, sorted(new_rank), lambda v: Packet.control(v, "ba-rank", rank=new_rank[v]), P, L,
              listeners=lower, salt=salt + 4, on_heard=adopt)
        used = lane.clock - e0
        if used > epoch_len:
            raise AssertionError(f"assignment epoch overran: {used} > {epoch_len}")
        lane.idle(epoch_len - used)
    for b in sorted(todo):
        st.failures.append(f"rank-{i} blue {b} left unassigned")
    used = lane.clock - start
    if used > slot_len:
        raise AssertionError(f"rank slot overran: {used} > {slot_len}")
    lane.idle(slot_len - used)


def forest_length(depth: int, L: int, consts: Constants = DEFAULT) -> int:
    """Rounds of the pipelined forest construction over ``depth`` level pairs."""
    if depth == 0:
        return 0
    steps = 2 * (depth - 1) + L
    return steps * 3 * assignment_lengths(L, consts)[2]


@dataclass
class GstBuild:
    labels: GstLabels
    rounds: int
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def gst_forest_on_lane(lane: Lane, g: Graph, level: Mapping[int, int], roots: Iterable[int], L: int,
                       consts: Constants = DEFAULT, *, depth: int | None = None) -> GstBuild:
    """Pipelined distributed construction over a known layering.

    The assignment of rank ``i`` between levels ``l-1`` and ``l`` runs in
    step ``2 (depth - l) + (L - i)``. Within a step, level pairs are time
    multiplexed by ``l mod 3`` so that concurrent pairs never share nodes
    or neighbors. Every step has the same fixed length. A nominal ``depth``
    larger than the deepest level pads the schedule with empty pairs.
    """
    roots = tuple(sorted(roots))
    layers: dict[int, list[int]] = defaultdict(list)
    for v, l in level.items():
        layers[l].append(v)
    if depth is None:
        depth = max(layers)
    elif depth < max(layers):
        raise GstError(f"nominal depth {depth} below the deepest level {max(layers)}")
    for v in layers:
        layers[v].sort()
    st = AssignmentState(rank={v: 1 for v in layers[depth]}, parent={}, parent_rank={})
    slot_len = assignment_lengths(L, consts)[2]
    start = lane.clock
    if depth > 0:
        for s in range(2 * (depth - 1) + L):
            for l in range(depth, 0, -1):
                i = L - (s - 2 * (depth - l))
                if not 1 <= i <= L:
                    continue
                sub = lane.sub(3, l % 3)
                assign_rank(sub, g, layers[l - 1], layers[l], i, st, L, consts, salt=salt_of("gst", l, i))
                # the slot for rank 1 ends the pair: childless reds become leaves
                if i == 1:
                    for v in layers[l - 1]:
                        if v not in st.rank:
                            st.rank[v] = 1
            lane.idle(3 * slot_len)
    parent: dict[int, int | None] = {v: st.parent.get(v) for v in level}
    prank: dict[int, int | None] = {v: st.parent_rank.get(v) for v in level}
    failures = list(st.failures)
    for v in level:
        if level[v] > 0 and parent[v] is None and not any(f.endswith(f"blue {v} left unassigned") for f in failures):
            failures.append(f"node {v} has no parent")
        st.rank.setdefault(v, 1)
    labels = GstLabels(dict(level), dict(st.rank), parent, prank, roots)
    return GstBuild(labels, lane.clock - start, failures)


def bfs_by_decay(lane: Lane, source: int, depth: int, L: int, consts: Constants = DEFAULT) -> dict[int, int]:
    """Level of every reached node: ``depth`` epochs of Decay phases, everyone informed relays."""
    P = consts.decay_whp_factor * L
    level = {source: 0}
    salt = salt_of("bfs-decay")
    for epoch in range(1, depth + 1):
        fresh: dict[int, int] = {}

        def hear(h):
            for v, o in h.items():
                if isinstance(o, Packet) and v not in level:
                    fresh.setdefault(v, epoch)

        decay(lane, list(level), lambda v: Packet.control(v, "bfs"), P, L, salt=salt, on_heard=hear)
        level.update(fresh)
    return level


def build_gst_distributed(g: Graph, source: int, cfg: EngineConfig, consts: Constants = DEFAULT, *,
                          depth: int | None = None, with_vdist: bool = False) -> tuple[GstBuild, Trace]:
    """Unknown-topology GST: Decay layering, then the pipelined assignments.

    ``depth`` is the known bound D on the source eccentricity (defaults to
    the true eccentricity).
    """
    L = clog2(g.n)
    if depth is None:
        depth = bfs_layering(g, source).diameter_bound
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=cfg.max_rounds, trace_level=cfg.trace_level)
    lane = ch.lane()
    level = bfs_by_decay(lane, source, depth, L, consts)
    failures = []
    if len(level) < g.n:
        failures.append(f"layering missed {g.n - len(level)} nodes")
    build = gst_forest_on_lane(lane, g, level, [source], L, consts)
    build.failures[:0] = failures
    if with_vdist:
        build.labels.vdist = vdist_on_lane(lane, build.labels, L, consts)
    build.rounds = lane.clock
    return build, ch.trace()


def gst_round_bound(depth: int, n: int, consts: Constants = DEFAULT) -> int:
    return consts.gst_round_constant * max(1, depth) * clog2(n) ** 4


def bipartite_assignment(g: Graph, reds: Iterable[int], blues: Iterable[int], blue_rank: Mapping[int, int],
                         cfg: EngineConfig, consts: Constants = DEFAULT) -> tuple[AssignmentState, Trace]:
    """One level pair in isolation: every blue rank from high to low, then leaves get rank 1."""
    L = clog2(g.n)
    ch = Channel(g, collision_detection=cfg.collision_detection, seed=cfg.seed,
                 max_rounds=cfg.max_rounds, trace_level=cfg.trace_level)
    lane = ch.lane()
    reds, blues = sorted(reds), sorted(blues)
    st = AssignmentState(rank=dict(blue_rank), parent={}, parent_rank={})
    for i in range(L, 0, -1):
        assign_rank(lane, g, reds, blues, i, st, L, consts, salt=salt_of("pair", i))
    for v in reds:
        st.rank.setdefault(v, 1)
    return st, ch.trace()
