"""Random linear network coding over GF(2).

Coefficient vectors and bodies are Python ints used as bit vectors: bit
``i`` of a coefficient vector selects message ``i`` of the generation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .engine import Kind, NodeRng, Packet


class RlncError(ValueError):
    pass


@dataclass(frozen=True)
class Generation:
    generation_id: int
    messages: tuple[int, ...]
    body_bits: int

    def __post_init__(self) -> None:
        if not self.messages:
            raise RlncError("a generation holds at least one message")
        limit = 1 << self.body_bits
        if any(not 0 <= m < limit for m in self.messages):
            raise RlncError(f"message bodies must fit in {self.body_bits} bits")

    @property
    def size(self) -> int:
        return len(self.messages)

    @classmethod
    def random(cls, generation_id: int, size: int, body_bits: int, seed: int) -> "Generation":
        rng = random.Random(f"generation:{seed}:{generation_id}")
        return cls(generation_id, tuple(rng.getrandbits(body_bits) for _ in range(size)), body_bits)

    def combine(self, coeffs: int) -> int:
        body = 0
        for i, m in enumerate(self.messages):
            if coeffs >> i & 1:
                body ^= m
        return body

    def source_space(self) -> "KnowledgeSpace":
        ks = KnowledgeSpace(self.generation_id, self.size)
        for i, m in enumerate(self.messages):
            ks.insert(1 << i, m)
        return ks


class KnowledgeSpace:
    """Reduced row-echelon basis of the coded packets a node has received.

    ``rows`` maps each pivot bit to its ``(coeffs, body)`` row; no row has
    a nonzero entry in another row's pivot column.
    """

    __slots__ = ("generation_id", "width", "rows")

    def __init__(self, generation_id: int, width: int):
        if width < 1:
            raise RlncError("generation size must be positive")
        self.generation_id = generation_id
        self.width = width
        self.rows: dict[int, tuple[int, int]] = {}

    @property
    def rank(self) -> int:
        return len(self.rows)

    @property
    def full(self) -> bool:
        return len(self.rows) == self.width

    def copy(self) -> "KnowledgeSpace":
        ks = KnowledgeSpace(self.generation_id, self.width)
        ks.rows = dict(self.rows)
        return ks

    def clear(self) -> None:
        self.rows.clear()

    def reduce(self, coeffs: int, body: int) -> tuple[int, int]:
        for p, (c, b) in self.rows.items():
            if coeffs >> p & 1:
                coeffs ^= c
                body ^= b
        return coeffs, body

    def insert(self, coeffs: int, body: int) -> bool:
        if coeffs >> self.width:
            raise RlncError(f"coefficient vector wider than {self.width} bits")
        coeffs, body = self.reduce(coeffs, body)
        if not coeffs:
            return False
        pivot = (coeffs & -coeffs).bit_length() - 1
        for p, (c, b) in list(self.rows.items()):
            if c >> pivot & 1:
                self.rows[p] = (c ^ coeffs, b ^ body)
        self.rows[pivot] = (coeffs, body)
        return True

    def basis(self) -> list[tuple[int, int]]:
        return [self.rows[p] for p in sorted(self.rows)]


def ks_insert(space: KnowledgeSpace, packet: Packet) -> bool:
    """Store a coded packet; returns whether it raised the rank."""
    if packet.kind is not Kind.CODED:
        raise RlncError(f"only coded packets enter a knowledge space, got {packet.kind.value}")
    if packet.generation != space.generation_id:
        raise RlncError(f"packet of generation {packet.generation} offered to generation {space.generation_id}")
    if packet.width != space.width:
        raise RlncError(f"coefficient length {packet.width} differs from generation size {space.width}")
    return space.insert(packet.coeffs, packet.body)


def random_combination(space: KnowledgeSpace, draw) -> tuple[int, int]:
    """XOR of a uniformly random nonempty subset of the basis.

    ``draw(attempt, nbits)`` supplies fresh random bits per attempt; the
    all-zero subset is redrawn so the result is never the zero vector.
    """
    rows = space.basis()
    if not rows:
        raise RlncError("cannot encode from an empty knowledge space; send noise instead")
    attempt = 0
    while True:
        mask = draw(attempt, len(rows))
        attempt += 1
        if mask:
            break
    coeffs = body = 0
    for i, (c, b) in enumerate(rows):
        if mask >> i & 1:
            coeffs ^= c
            body ^= b
    return coeffs, body


def encode_random(space: KnowledgeSpace, rng: NodeRng, rnd: int, salt: int = 0) -> Packet:
    coeffs, body = random_combination(space, lambda a, k: rng.bits(rnd, k, salt * 131 + a))
    return Packet.coded(rng.node, space.generation_id, coeffs, space.width, body)


def decode(space: KnowledgeSpace) -> list[int] | None:
    """The generation's messages in order, or ``None`` while rank is short."""
    if not space.full:
        return None
    return [space.rows[i][1] for i in range(space.width)]


def is_infected(space: KnowledgeSpace, mu: int) -> bool:
    """Whether some stored row has odd inner product with ``mu``."""
    if mu == 0:
        raise RlncError("mu must be a nonzero vector")
    if mu >> space.width:
        raise RlncError(f"mu wider than {space.width} bits")
    return any((c & mu).bit_count() & 1 for c, _ in space.rows.values())


def gf2_rank(vectors: list[int]) -> int:
    """Plain elimination, kept separate from :class:`KnowledgeSpace` for cross-checks."""
    basis: list[int] = []
    for v in vectors:
        for b in basis:
            v = min(v, v ^ b)
        if v:
            basis.append(v)
            basis.sort(reverse=True)
    return len(basis)
