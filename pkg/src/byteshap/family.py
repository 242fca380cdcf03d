"""Seed families, length-mutator withdrawal and trim position tracking.

A family is every seed descended from one founding input without a net
length change. Members share one Shapley vector indexed by positions of the
founding input, plus a family-local coverage map. Trimming may shorten a
member; its ``map_vector`` then records, for each local byte, the position
in the founding input it came from. Positions are 0-based throughout.
"""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from byteshap.coverage import CoverageMap, absorb
from byteshap.errors import StructuralError
from byteshap.shapley import ShapleyVector
from byteshap.targets import ExecutionResult

Target = Callable[[bytes], ExecutionResult]


@dataclass
class Seed:
    id: int
    bytes: bytes
    family_id: int
    map_vector: tuple[int, ...]
    edge_set: frozenset[int]
    exec_count: int = 0
    retained_at: int = 0

    def __post_init__(self):
        if len(self.map_vector) != len(self.bytes):
            raise StructuralError(
                f"seed {self.id}: map_vector has {len(self.map_vector)} entries for {len(self.bytes)} bytes"
            )

    def __len__(self) -> int:
        return len(self.bytes)

    def local_index(self) -> dict[int, int]:
        """Inverse of ``map_vector``: family position -> local position."""
        return {fam: loc for loc, fam in enumerate(self.map_vector)}


@dataclass
class Family:
    id: int
    original_length: int
    shapley: ShapleyVector
    local_map: CoverageMap
    members: list[int] = field(default_factory=list)


class IdAllocator:
    def __init__(self, start: int = 0):
        self.next = start

    def __call__(self) -> int:
        value = self.next
        self.next += 1
        return value


def found_family(
    initial_seed_bytes: bytes,
    edge_set: Iterable[int],
    family_id: int = 0,
    seed_id: int = 0,
    retained_at: int = 0,
) -> tuple[Family, Seed]:
    """Start a family from one input. Returns the family and its first member."""
    if not initial_seed_bytes:
        raise StructuralError("cannot found a family from an empty input")
    n = len(initial_seed_bytes)
    edges = frozenset(edge_set)
    seed = Seed(
        id=seed_id,
        bytes=bytes(initial_seed_bytes),
        family_id=family_id,
        map_vector=tuple(range(n)),
        edge_set=edges,
        retained_at=retained_at,
    )
    family = Family(
        id=family_id,
        original_length=n,
        shapley=ShapleyVector.zeros(n),
        local_map=CoverageMap.from_edges(edges),
        members=[seed.id],
    )
    return family, seed


# -- mutator stack ------------------------------------------------------------


@dataclass(frozen=True)
class Insert:
    pos: int
    data: bytes

    @property
    def length(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class Delete:
    pos: int
    removed: bytes


@dataclass(frozen=True)
class Overwrite:
    pos: int
    old: bytes
    new: bytes


Mutator = Insert | Delete | Overwrite


class MutatorStack:
    """Ordered log of the edits one havoc round applied."""

    def __init__(self, entries: Iterable[Mutator] = ()):
        self.entries: list[Mutator] = list(entries)

    def push(self, entry: Mutator) -> None:
        self.entries.append(entry)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        return f"MutatorStack({self.entries!r})"

    @property
    def changes_length(self) -> bool:
        return any(not isinstance(e, Overwrite) for e in self.entries)

    def overwritten_positions(self) -> list[int]:
        return [e.pos for e in self.entries if isinstance(e, Overwrite)]


def apply_mutator(buf: bytearray, entry: Mutator) -> None:
    if isinstance(entry, Overwrite):
        end = entry.pos + len(entry.new)
        if entry.pos < 0 or end > len(buf):
            raise StructuralError(f"overwrite at {entry.pos} runs past buffer of length {len(buf)}")
        buf[entry.pos:end] = entry.new
    elif isinstance(entry, Insert):
        if not 0 <= entry.pos <= len(buf):
            raise StructuralError(f"insert at {entry.pos} outside buffer of length {len(buf)}")
        buf[entry.pos:entry.pos] = entry.data
    elif isinstance(entry, Delete):
        end = entry.pos + len(entry.removed)
        if entry.pos < 0 or end > len(buf):
            raise StructuralError(f"delete of {len(entry.removed)} bytes at {entry.pos} outside buffer of length {len(buf)}")
        del buf[entry.pos:end]
    else:
        raise TypeError(f"not a mutator: {entry!r}")


def replay(source: bytes, stack: MutatorStack | Sequence[Mutator]) -> bytes:
    """Apply every recorded edit to ``source`` in order."""
    buf = bytearray(source)
    for entry in stack:
        apply_mutator(buf, entry)
    return bytes(buf)


def withdraw(mutated: bytes, stack: MutatorStack | Sequence[Mutator]) -> bytes:
    """Undo the length-changing edits, newest first; overwrites stay applied."""
    buf = bytearray(mutated)
    for entry in reversed(list(stack)):
        if isinstance(entry, Insert):
            end = entry.pos + entry.length
            if entry.pos < 0 or end > len(buf):
                raise StructuralError(
                    f"cannot withdraw insert of {entry.length} bytes at {entry.pos} from buffer of length {len(buf)}"
                )
            del buf[entry.pos:end]
        elif isinstance(entry, Delete):
            if not 0 <= entry.pos <= len(buf):
                raise StructuralError(f"cannot withdraw delete at {entry.pos} in buffer of length {len(buf)}")
            buf[entry.pos:entry.pos] = entry.removed
    return bytes(buf)


# -- admission --------------------------------------------------------------


def try_admit(
    family: Family,
    candidate: bytes,
    parent: Seed,
    triggering_edges: Iterable[int],
    target: Target,
    new_id: Callable[[], int],
    retained_at: int = 0,
    result: ExecutionResult | None = None,
) -> Seed | None:
    """Admit ``candidate`` to ``family`` if it still reaches every triggering edge.

    ``candidate`` must already have its length mutators withdrawn. ``None``
    means the caller should found a new family from the un-withdrawn input.
    """
    if len(candidate) != len(parent.bytes):
        return None
    if result is None:
        result = target(candidate)
    if not frozenset(triggering_edges) <= result.edges:
        return None
    seed = Seed(
        id=new_id(),
        bytes=bytes(candidate),
        family_id=family.id,
        map_vector=parent.map_vector,
        edge_set=result.edges,
        retained_at=retained_at,
    )
    family.members.append(seed.id)
    absorb(family.local_map, result.edges)
    return seed


# -- trimming ----------------------------------------------------------------


def _check_ranges(ranges: Sequence[tuple[int, int]], length: int) -> None:
    prev_end = 0
    for start, end in ranges:
        if start < prev_end or end < start or end > length:
            raise StructuralError(f"kept ranges must be sorted, disjoint and within [0, {length}): {list(ranges)}")
        prev_end = end


def trim_track(seed: Seed, kept_ranges: Sequence[tuple[int, int]], new_id: int | None = None) -> Seed:
    """Seed made of the kept half-open ranges, with its map_vector narrowed to match."""
    _check_ranges(kept_ranges, len(seed.bytes))
    data = b"".join(seed.bytes[s:e] for s, e in kept_ranges)
    mv = tuple(m for s, e in kept_ranges for m in seed.map_vector[s:e])
    if not data:
        raise StructuralError("trim would leave an empty seed")
    return Seed(
        id=seed.id if new_id is None else new_id,
        bytes=data,
        family_id=seed.family_id,
        map_vector=mv,
        edge_set=seed.edge_set,
        exec_count=seed.exec_count,
        retained_at=seed.retained_at,
    )


def to_family_positions(seed: Seed, local_positions: Iterable[int]) -> set[int]:
    out = set()
    for p in local_positions:
        if not 0 <= p < len(seed.map_vector):
            raise IndexError(f"local position {p} outside seed {seed.id} of length {len(seed.bytes)}")
        out.add(seed.map_vector[p])
    return out


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def trim_ranges(data: bytes, edges: frozenset[int], target: Target, min_chunk: int = 4) -> list[tuple[int, int]]:
    """AFL-style trimming: drop power-of-two chunks, largest first, while edges are unchanged.

    Returns the kept ranges in the input's coordinates.
    """
    keep = [True] * len(data)
    chunk = max(_next_pow2(len(data)) // 16, min_chunk)
    while chunk >= min_chunk:
        pos = 0
        while pos < len(data):
            span = range(pos, min(pos + chunk, len(data)))
            alive = [i for i in span if keep[i]]
            remaining = sum(keep) - len(alive)
            if alive and remaining > 0:
                trial = bytes(data[i] for i in range(len(data)) if keep[i] and i not in span)
                if target(trial).edges == edges:
                    for i in alive:
                        keep[i] = False
            pos += chunk
        chunk //= 2
    ranges = []
    start = None
    for i, k in enumerate(keep + [False]):
        if k and start is None:
            start = i
        elif not k and start is not None:
            ranges.append((start, i))
            start = None
    return ranges


# -- corpus directory ----------------------------------------------------------


def seed_filename(seed: Seed) -> str:
    return f"id_{seed.id}_fam_{seed.family_id}.bin"


def write_corpus(directory: str | os.PathLike, families: Sequence[Family], seeds: Sequence[Seed]) -> None:
    """One ``.bin`` per seed with a ``.map`` sidecar, plus ``families.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        stem = directory / seed_filename(seed)
        stem.write_bytes(seed.bytes)
        stem.with_suffix(".map").write_text(",".join(str(m) for m in seed.map_vector) + "\n")
    meta = {
        "families": [
            {
                "id": fam.id,
                "original_length": fam.original_length,
                "phi": [float(x) for x in fam.shapley.phi],
                "local_map": sorted(fam.local_map.seen),
                "members": list(fam.members),
            }
            for fam in families
        ],
        "seeds": [
            {
                "id": s.id,
                "family_id": s.family_id,
                "edges": sorted(s.edge_set),
                "exec_count": s.exec_count,
                "retained_at": s.retained_at,
            }
            for s in seeds
        ],
    }
    (directory / "families.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_corpus(directory: str | os.PathLike) -> tuple[list[Family], list[Seed]]:
    directory = Path(directory)
    meta_path = directory / "families.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise StructuralError(f"no families.json in {directory}") from None
    seed_meta = {m["id"]: m for m in meta["seeds"]}
    seeds = []
    for m in meta["seeds"]:
        path = directory / f"id_{m['id']}_fam_{m['family_id']}.bin"
        data = path.read_bytes()
        map_text = path.with_suffix(".map").read_text().strip()
        mv = tuple(int(x) for x in map_text.split(",")) if map_text else ()
        seeds.append(
            Seed(
                id=m["id"],
                bytes=data,
                family_id=m["family_id"],
                map_vector=mv,
                edge_set=frozenset(seed_meta[m["id"]]["edges"]),
                exec_count=m.get("exec_count", 0),
                retained_at=m.get("retained_at", 0),
            )
        )
    families = [
        Family(
            id=f["id"],
            original_length=f["original_length"],
            shapley=ShapleyVector(np.asarray(f["phi"], dtype=np.float64)),
            local_map=CoverageMap.from_edges(f["local_map"]),
            members=list(f["members"]),
        )
        for f in meta["families"]
    ]
    return families, seeds
