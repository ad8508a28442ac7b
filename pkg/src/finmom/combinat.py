"""Permutations, partial permutations, and their induced partitions.

A trace of a matrix word is visualized as edges placed on a circle, one
circle per trace factor; expectations over Gaussian entries reduce to sums
over pairings of edges.  This module enumerates those pairings and builds
the equivalence relations they induce on edges and vertices:

* a partial permutation pairs a subset of conjugated positions with a
  subset of unconjugated ones;
* ``rho_of`` closes the pairing into a partition of the doubled edge set
  (vertex identifications);
* ``sigma_of`` groups the remaining deterministic edges into the cyclic
  trace products they form;
* ``rho_sa_of`` / ``sigma_sa_of`` are the selfadjoint variants on the
  undoubled edge set.

All indices are 1-based.  Addition and subtraction of edge indices wrap
within each circle (on a 6-edge circle, 6+1 = 1 and 1-1 = 6).  Enumeration
order is deterministic: subsets lexicographic, pairings lexicographic.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence


# -- circle layouts ---------------------------------------------------------

@dataclass(frozen=True)
class CircleLayout:
    """Edges 1..total distributed over circles of the given lengths."""

    lengths: tuple[int, ...]

    def __post_init__(self):
        if not all(isinstance(p, int) and p >= 1 for p in self.lengths):
            raise ValueError(f"circle lengths must be positive integers: {self.lengths}")
        starts = []
        pos = 1
        for length in self.lengths:
            starts.append(pos)
            pos += length
        object.__setattr__(self, "_starts", tuple(starts))
        object.__setattr__(self, "total", pos - 1)

    @classmethod
    def single(cls, length: int) -> "CircleLayout":
        return cls((length,))

    @classmethod
    def doubled(cls, parts: Sequence[int]) -> "CircleLayout":
        """Layout for words with an (entry, conjugate-entry) pair per unit: 2p edges per circle."""
        return cls(tuple(2 * p for p in parts))

    def circle_of(self, j: int) -> int:
        if not 1 <= j <= self.total:
            raise ValueError(f"edge index {j} outside 1..{self.total}")
        return bisect.bisect_right(self._starts, j) - 1

    def succ(self, j: int) -> int:
        i = self.circle_of(j)
        start = self._starts[i]
        return start + (j - start + 1) % self.lengths[i]

    def pred(self, j: int) -> int:
        i = self.circle_of(j)
        start = self._starts[i]
        return start + (j - start - 1) % self.lengths[i]


# -- set partitions ---------------------------------------------------------

class DisjointSet:
    """Union-find over an explicit iterable of elements."""

    def __init__(self, elements):
        self.parent = {e: e for e in elements}

    def find(self, x):
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def same(self, a, b) -> bool:
        return self.find(a) == self.find(b)

    def blocks(self) -> tuple[tuple[int, ...], ...]:
        groups: dict[int, list[int]] = {}
        for e in self.parent:
            groups.setdefault(self.find(e), []).append(e)
        return tuple(tuple(sorted(g)) for g in sorted(groups.values(), key=min))


@dataclass(frozen=True)
class SetPartition:
    """Disjoint nonempty blocks covering a subset of {1..ground_size}."""

    ground_size: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for block in self.blocks:
            if not block:
                raise ValueError("empty block")
            for e in block:
                if not 1 <= e <= self.ground_size:
                    raise ValueError(f"element {e} outside ground set 1..{self.ground_size}")
                if e in seen:
                    raise ValueError(f"element {e} in two blocks")
                seen.add(e)
        object.__setattr__(self, "covered", frozenset(seen))

    @classmethod
    def from_disjoint_set(cls, ds: DisjointSet, ground_size: int) -> "SetPartition":
        return cls(ground_size, ds.blocks())

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(sorted((len(b) for b in self.blocks), reverse=True))

    def block_of(self, e: int) -> tuple[int, ...]:
        for block in self.blocks:
            if e in block:
                return block
        raise KeyError(e)

    def same_block(self, a: int, b: int) -> bool:
        for block in self.blocks:
            if a in block:
                return b in block
        return False


@dataclass(frozen=True)
class BlockStats:
    """Block counts of a parity-pure partition relative to a deterministic edge set."""

    k: int   # blocks of even indices only
    l: int   # blocks of odd indices only
    kd: int  # even blocks meeting the deterministic closure
    ld: int  # odd blocks meeting the deterministic closure
    even_block_sizes: tuple[int, ...]
    odd_block_sizes: tuple[int, ...]


# -- permutations and partial permutations ----------------------------------

Permutation = tuple[int, ...]  # images of 1..p, 1-based: pi[i-1] = image of i


def enumerate_permutations(p: int) -> Iterator[Permutation]:
    """All p! permutations of {1..p} in lexicographic order of image tuples."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return iter(itertools.permutations(range(1, p + 1)))


def permutation_cycles(pi: Permutation) -> list[tuple[int, ...]]:
    seen: set[int] = set()
    cycles = []
    for start in range(1, len(pi) + 1):
        if start in seen:
            continue
        cycle = [start]
        seen.add(start)
        j = pi[start - 1]
        while j != start:
            cycle.append(j)
            seen.add(j)
            j = pi[j - 1]
        cycles.append(tuple(cycle))
    return cycles


@dataclass(frozen=True)
class PartialPermutation:
    """A bijection from ``rho1`` onto ``rho2``, both subsets of {1..p}.

    ``rho1`` indexes the conjugated positions of a word, ``rho2`` the
    unconjugated ones; ``images[i]`` is the partner of ``rho1[i]``.
    """

    p: int
    rho1: tuple[int, ...]
    rho2: tuple[int, ...]
    images: tuple[int, ...]

    def __post_init__(self):
        if len(self.rho1) != len(self.rho2) or len(self.images) != len(self.rho1):
            raise ValueError("rho1, rho2, images must have equal sizes")
        if sorted(self.images) != sorted(self.rho2):
            raise ValueError("images must be a rearrangement of rho2")

    @property
    def size(self) -> int:
        return len(self.rho1)

    def mapping(self) -> dict[int, int]:
        return dict(zip(self.rho1, self.images))

    def inverse_mapping(self) -> dict[int, int]:
        return {img: src for src, img in zip(self.rho1, self.images)}

    def is_disjoint(self) -> bool:
        return not set(self.rho1) & set(self.rho2)

    @classmethod
    def full(cls, pi: Permutation) -> "PartialPermutation":
        p = len(pi)
        idx = tuple(range(1, p + 1))
        return cls(p, idx, idx, tuple(pi))


def enumerate_partial_permutations(p: int, disjoint: bool = False) -> Iterator[PartialPermutation]:
    """Every (rho1, rho2, pairing) triple once, in deterministic order."""
    if p < 1:
        raise ValueError("p must be >= 1")
    universe = range(1, p + 1)
    for k in range(p + 1):
        for rho1 in itertools.combinations(universe, k):
            pool = universe if not disjoint else [i for i in universe if i not in rho1]
            for rho2 in itertools.combinations(pool, k):
                for images in itertools.permutations(rho2):
                    yield PartialPermutation(p, rho1, rho2, images)


def count_partial_permutations(p: int, disjoint: bool = False) -> int:
    if not disjoint:
        return sum(math.comb(p, k) ** 2 * math.factorial(k) for k in range(p + 1))
    return sum(
        math.comb(p, k) * math.comb(p - k, k) * math.factorial(k) for k in range(p // 2 + 1)
    )


# -- pairing-induced partitions (rectangular/complex words) ------------------

def hat_pi(pp: PartialPermutation, layout: CircleLayout) -> dict[int, int]:
    """Doubled-edge involution: conjugated edge 2j is glued to edge 2*pi(j)-1.

    The result maps even indices to odd ones and vice versa and is its own
    inverse on its domain.
    """
    if layout.total != 2 * pp.p:
        raise ValueError(f"layout has {layout.total} edges, need {2 * pp.p}")
    hat: dict[int, int] = {}
    inv = pp.inverse_mapping()
    for j in pp.rho2:
        hat[2 * j - 1] = 2 * inv[j]
    for j, img in zip(pp.rho1, pp.images):
        hat[2 * j] = 2 * img - 1
    return hat


def rho_of(pp: PartialPermutation, layout: CircleLayout) -> SetPartition:
    """Vertex identifications forced by gluing paired edges head-to-tail."""
    hat = hat_pi(pp, layout)
    ds = DisjointSet(range(1, layout.total + 1))
    for j, h in hat.items():
        ds.union(j, layout.succ(h))
        ds.union(layout.succ(j), h)
    return SetPartition.from_disjoint_set(ds, layout.total)


def det_edges_of(pp: PartialPermutation) -> tuple[int, ...]:
    """Doubled-edge positions not consumed by the pairing (deterministic factors)."""
    r1 = set(pp.rho1)
    r2 = set(pp.rho2)
    odd = [2 * i - 1 for i in range(1, pp.p + 1) if i not in r2]
    even = [2 * i for i in range(1, pp.p + 1) if i not in r1]
    return tuple(sorted(odd + even))


def sigma_of(
    pp: PartialPermutation,
    layout: CircleLayout,
    det_edges: Sequence[int] | None = None,
    rho: SetPartition | None = None,
) -> SetPartition:
    """Cyclic grouping of deterministic edges after the pairing-induced gluing.

    Two deterministic edges fall in one block when a path of deterministic
    edges connects them in the glued diagram: either they are adjacent on a
    circle, or the vertex after one is identified with the start of the other.
    """
    dets = tuple(det_edges) if det_edges is not None else det_edges_of(pp)
    if rho is None:
        rho = rho_of(pp, layout)
    det_set = set(dets)
    ds = DisjointSet(dets)
    for k in dets:
        nxt = layout.succ(k)
        if nxt in det_set:
            ds.union(k, nxt)
    block_index: dict[int, int] = {}
    for bi, block in enumerate(rho.blocks):
        for e in block:
            block_index[e] = bi
    for k in dets:
        after_k = block_index[layout.succ(k)]
        for l in dets:
            if block_index[l] == after_k:
                ds.union(k, l)
    return SetPartition(layout.total, ds.blocks())


def block_stats(
    rho: SetPartition, det_edges: Sequence[int], layout: CircleLayout
) -> BlockStats:
    """Classify parity-pure blocks and count those meeting the deterministic closure."""
    det_closure = set(det_edges) | {layout.succ(k) for k in det_edges}
    k = l = kd = ld = 0
    even_sizes: list[int] = []
    odd_sizes: list[int] = []
    for block in rho.blocks:
        parities = {e % 2 for e in block}
        if len(parities) != 1:
            raise ValueError(f"mixed-parity block {block}")
        meets = any(e in det_closure for e in block)
        if parities == {0}:
            k += 1
            even_sizes.append(len(block))
            kd += meets
        else:
            l += 1
            odd_sizes.append(len(block))
            ld += meets
    return BlockStats(
        k=k,
        l=l,
        kd=kd,
        ld=ld,
        even_block_sizes=tuple(sorted(even_sizes, reverse=True)),
        odd_block_sizes=tuple(sorted(odd_sizes, reverse=True)),
    )


def restrict_parity(rho: SetPartition, parity: str) -> SetPartition:
    """Keep only all-odd or all-even blocks, reindexed onto {1..p}."""
    if parity not in ("odd", "even"):
        raise ValueError("parity must be 'odd' or 'even'")
    want = 1 if parity == "odd" else 0
    blocks = []
    for block in rho.blocks:
        parities = {e % 2 for e in block}
        if len(parities) != 1:
            raise ValueError(f"mixed-parity block {block}")
        if parities == {want}:
            if want == 1:
                blocks.append(tuple((e + 1) // 2 for e in block))
            else:
                blocks.append(tuple(e // 2 for e in block))
    return SetPartition(rho.ground_size // 2, tuple(blocks))


# -- selfadjoint variants ----------------------------------------------------

def _require_disjoint(pp: PartialPermutation):
    if not pp.is_disjoint():
        raise ValueError(f"rho1 and rho2 must be disjoint, got {pp.rho1} and {pp.rho2}")


def rho_sa_of(pp: PartialPermutation, layout: CircleLayout) -> SetPartition:
    """Edge identifications for selfadjoint words: i is glued after its partner."""
    _require_disjoint(pp)
    if layout.total != pp.p:
        raise ValueError(f"layout has {layout.total} edges, need {pp.p}")
    ds = DisjointSet(range(1, pp.p + 1))
    mapping = pp.mapping()
    for i, img in mapping.items():
        ds.union(i, layout.succ(img))
        ds.union(layout.succ(i), img)
    return SetPartition.from_disjoint_set(ds, pp.p)


def sa_det_edges_of(pp: PartialPermutation) -> tuple[int, ...]:
    used = set(pp.rho1) | set(pp.rho2)
    return tuple(i for i in range(1, pp.p + 1) if i not in used)


def sigma_sa_of(
    pp: PartialPermutation,
    layout: CircleLayout,
    rho_sa: SetPartition | None = None,
) -> SetPartition:
    """Selfadjoint analogue of :func:`sigma_of` on the unpaired edges."""
    _require_disjoint(pp)
    if rho_sa is None:
        rho_sa = rho_sa_of(pp, layout)
    dets = sa_det_edges_of(pp)
    det_set = set(dets)
    ds = DisjointSet(dets)
    for k in dets:
        nxt = layout.succ(k)
        if nxt in det_set:
            ds.union(k, nxt)
    for k in dets:
        for l in dets:
            if rho_sa.same_block(layout.succ(k), l) or rho_sa.same_block(k, layout.succ(l)):
                ds.union(k, l)
    return SetPartition(pp.p, ds.blocks())


def blocks_meeting(partition: SetPartition, det_edges: Sequence[int], layout: CircleLayout) -> int:
    """Number of blocks intersecting the deterministic edges or their successors."""
    closure = set(det_edges) | {layout.succ(k) for k in det_edges}
    return sum(1 for block in partition.blocks if any(e in closure for e in block))
