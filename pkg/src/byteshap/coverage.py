"""Edge-set coverage and self-new edge gains.

Edges are opaque integer labels supplied by the target. An ``EdgeSet`` is a
plain ``frozenset[int]``; ``CoverageMap`` is the mutable "virgin map" used as
a baseline, either campaign-wide or family-local.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field

EdgeSet = frozenset  # frozenset[int]; alias kept for readability


def edge_set(edges: Iterable[int] = ()) -> frozenset[int]:
    return frozenset(int(e) for e in edges)


@dataclass
class CoverageMap:
    seen: set[int] = field(default_factory=set)
    generation: int = 0

    @classmethod
    def from_edges(cls, edges: Iterable[int]) -> CoverageMap:
        return cls(seen=set(edges))

    def __len__(self) -> int:
        return len(self.seen)

    def __contains__(self, edge: int) -> bool:
        return edge in self.seen

    def snapshot(self) -> frozenset[int]:
        return frozenset(self.seen)

    def copy(self) -> CoverageMap:
        return CoverageMap(set(self.seen), self.generation)


def diff_new(observed: Iterable[int], baseline: CoverageMap) -> frozenset[int]:
    """Edges in ``observed`` the baseline has not seen. Does not touch ``baseline``."""
    return frozenset(observed).difference(baseline.seen)


def gain(baseline: CoverageMap, observed: Iterable[int]) -> int:
    """Number of self-new edges ``observed`` would add to ``baseline``."""
    return len(diff_new(observed, baseline))


def absorb(cmap: CoverageMap, edges: Iterable[int]) -> int:
    """Merge ``edges`` into ``cmap`` and return how many were new.

    The generation counter moves only when the seen set actually grows.
    """
    new = diff_new(edges, cmap)
    if new:
        cmap.seen.update(new)
        cmap.generation += 1
    return len(new)
