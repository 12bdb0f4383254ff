"""Undirected connected topologies, deterministic generators and BFS layering.

Nodes are dense integers ``0..n-1``. Graphs are immutable once built, so a
single instance can be shared by any number of simulation runs.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

FAMILIES = ("path", "cycle", "star", "grid", "random_tree", "gnp_connected", "caterpillar")
GNP_MAX_TRIES = 1000


class GraphError(ValueError):
    """Invalid graph input. ``kind`` names the failed check."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def clog2(n: int) -> int:
    """``ceil(log2 n)`` floored at 1, so phase lengths never vanish."""
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


@dataclass(frozen=True)
class Graph:
    n: int
    adj: tuple[frozenset[int], ...]
    nbrs: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1 or len(self.adj) != self.n:
            raise GraphError("size", f"expected {self.n} adjacency sets, got {len(self.adj)}")
        for u, ns in enumerate(self.adj):
            if u in ns:
                raise GraphError("self-loop", f"node {u} is adjacent to itself")
            for v in ns:
                if not 0 <= v < self.n or u not in self.adj[v]:
                    raise GraphError("asymmetric", f"edge {u}-{v} is not symmetric")
        object.__setattr__(self, "nbrs", tuple(tuple(sorted(ns)) for ns in self.adj))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], *, require_connected: bool = True) -> "Graph":
        adj: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise GraphError("self-loop", f"edge {u}-{v}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError("range", f"edge {u}-{v} outside 0..{n - 1}")
            if v in adj[u]:
                raise GraphError("duplicate", f"edge {min(u, v)}-{max(u, v)} listed twice")
            adj[u].add(v)
            adj[v].add(u)
        g = cls(n, tuple(frozenset(s) for s in adj))
        if require_connected and not g.is_connected():
            raise GraphError("disconnected", f"graph on {n} nodes has more than one component")
        return g

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.nbrs[u]

    def degree(self, u: int) -> int:
        return len(self.nbrs[u])

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.nbrs[u] if u < v]

    def is_connected(self) -> bool:
        return len(_reach(self.nbrs, 0)) == self.n

    def subgraph_edges(self, nodes: Iterable[int]) -> list[tuple[int, int]]:
        keep = set(nodes)
        return [(u, v) for u, v in self.edges() if u in keep and v in keep]


def _reach(nbrs: Sequence[Sequence[int]], start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


# -- generators ---------------------------------------------------------------

def generate_graph(family: str, seed: int = 0, **params) -> Graph:
    """Build a member of ``family``; identical arguments give identical graphs.

    Parameters by family: ``n`` for path, cycle, star, random_tree;
    ``n`` and ``p`` for gnp_connected; ``rows`` and ``cols`` for grid;
    ``spine`` and ``legs`` (leaves per spine node) for caterpillar.
    """
    rng = random.Random(seed)
    if family == "path":
        n = _positive(params, "n")
        return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])
    if family == "cycle":
        n = _positive(params, "n")
        if n < 3:
            raise GraphError("params", "a cycle needs n >= 3")
        return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    if family == "star":
        n = _positive(params, "n")
        return Graph.from_edges(n, [(0, i) for i in range(1, n)])
    if family == "grid":
        rows, cols = _positive(params, "rows"), _positive(params, "cols")
        edges = []
        for r in range(rows):
            for c in range(cols):
                u = r * cols + c
                if c + 1 < cols:
                    edges.append((u, u + 1))
                if r + 1 < rows:
                    edges.append((u, u + cols))
        return Graph.from_edges(rows * cols, edges)
    if family == "random_tree":
        n = _positive(params, "n")
        return Graph.from_edges(n, [(rng.randrange(i), i) for i in range(1, n)])
    if family == "gnp_connected":
        n = _positive(params, "n")
        p = float(params["p"])
        if not 0.0 < p <= 1.0:
            raise GraphError("params", f"edge probability {p} outside (0, 1]")
        tries = int(params.get("max_tries", GNP_MAX_TRIES))
        for _ in range(tries):
            edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
            g = Graph.from_edges(n, edges, require_connected=False)
            if g.is_connected():
                return g
        raise GraphError("params", f"no connected G({n}, {p}) sample in {tries} tries")
    if family == "caterpillar":
        spine, legs = _positive(params, "spine"), int(params.get("legs", 1))
        if legs < 0:
            raise GraphError("params", "legs must be nonnegative")
        edges = [(i, i + 1) for i in range(spine - 1)]
        nxt = spine
        for s in range(spine):
            for _ in range(legs):
                edges.append((s, nxt))
                nxt += 1
        return Graph.from_edges(nxt, edges)
    raise GraphError("params", f"unknown family {family!r}; expected one of {FAMILIES}")


def _positive(params: dict, key: str) -> int:
    if key not in params:
        raise GraphError("params", f"missing parameter {key!r}")
    value = int(params[key])
    if value < 1:
        raise GraphError("params", f"{key} must be >= 1, got {value}")
    return value


# -- edge-list format ---------------------------------------------------------

def parse_graph(text: str) -> Graph:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise GraphError("malformed", "empty input; first line must be the node count")
    first_no, first = lines[0]
    try:
        n = int(first)
    except ValueError:
        raise GraphError("malformed", f"line {first_no}: node count expected, got {first!r}") from None
    if n < 1:
        raise GraphError("malformed", f"line {first_no}: node count must be positive")
    edges = []
    for no, ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2 or not all(_is_int(x) for x in parts):
            raise GraphError("malformed", f"line {no}: expected 'u v', got {ln!r}")
        u, v = int(parts[0]), int(parts[1])
        if u == v:
            raise GraphError("self-loop", f"line {no}: node {u} linked to itself")
        edges.append((u, v))
    return Graph.from_edges(n, edges)


def serialize_graph(g: Graph) -> str:
    return "\n".join([str(g.n)] + [f"{u} {v}" for u, v in g.edges()]) + "\n"


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


# -- BFS ----------------------------------------------------------------------

@dataclass(frozen=True)
class BfsLayering:
    source: int
    level: tuple[int, ...]
    diameter_bound: int

    def layers(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.diameter_bound + 1)]
        for v, lv in enumerate(self.level):
            out[lv].append(v)
        return out


def bfs_layering(g: Graph, source: int) -> BfsLayering:
    if not 0 <= source < g.n:
        raise GraphError("range", f"source {source} outside 0..{g.n - 1}")
    level = [-1] * g.n
    level[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.nbrs[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    if min(level) < 0:
        raise GraphError("disconnected", "source does not reach every node")
    return BfsLayering(source, tuple(level), max(level))


def bfs_tree(g: Graph, source: int) -> dict[int, int]:
    """Canonical BFS tree: each node's parent is its lowest-ID neighbor one level up."""
    level = bfs_layering(g, source).level
    return {
        v: min(u for u in g.nbrs[v] if level[u] == level[v] - 1)
        for v in range(g.n)
        if v != source
    }
