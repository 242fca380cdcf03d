"""Per-position Shapley credit.

Three pieces live here:

* ``exact_shapley`` enumerates every coalition. It is exponential and only
  used as an oracle and for desk-scale attribution reports.
* ``recovery_analysis`` takes a gainful mutation and restores mutated bytes
  one at a time to split them into redundant and necessary positions.
* ``incremental_update`` folds one verdict into a family's running vector:
  every necessary position gets the full gain (coalition weight fixed at 1),
  redundant positions get nothing.

The accumulated vector is not the axiomatic Shapley value. It agrees with
the exact value on which positions have zero credit and on sign, not on
magnitude.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from byteshap.coverage import CoverageMap, diff_new
from byteshap.errors import StructuralError
from byteshap.targets import ExecutionResult

log = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 20

CharacteristicFn = Callable[[frozenset], float]


# -- exact oracle ----------------------------------------------------------


def _check_players(n_players: int) -> None:
    if n_players < 1:
        raise ValueError(f"need at least one player, got {n_players}")
    if n_players > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact Shapley over {n_players} players would need 2^{n_players} evaluations (limit {MAX_EXACT_PLAYERS})")


def coalition_values(fn: CharacteristicFn, n_players: int) -> np.ndarray:
    """fn evaluated on every coalition, indexed by bitmask."""
    _check_players(n_players)
    values = np.empty(1 << n_players, dtype=np.float64)
    for mask in range(1 << n_players):
        members = frozenset(i for i in range(n_players) if mask >> i & 1)
        values[mask] = fn(members)
    return values


def exact_shapley(fn: CharacteristicFn, n_players: int) -> np.ndarray:
    """Shapley values by full enumeration.

    phi_j = sum over coalitions G without j of
    |G|! (n - |G| - 1)! / n! * (fn(G + j) - fn(G)).
    """
    values = coalition_values(fn, n_players)
    n = n_players
    masks = np.arange(1 << n, dtype=np.int64)
    sizes = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        sizes += (masks >> i) & 1
    weight_by_size = np.array(
        [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)],
        dtype=np.float64,
    )
    phi = np.empty(n, dtype=np.float64)
    for j in range(n):
        without = masks[((masks >> j) & 1) == 0]
        marginal = values[without | (1 << j)] - values[without]
        phi[j] = float(np.dot(weight_by_size[sizes[without]], marginal))
    return phi


def attribution_report(fn: CharacteristicFn, n: int) -> list[tuple[int, float, float]]:
    """(position, phi, cumulative share of total phi), highest phi first.

    Ties keep ascending position order. Shares are fractions in [0, 1]; they
    are all zero when total credit is zero.
    """
    phi = exact_shapley(fn, n)
    order = sorted(range(n), key=lambda p: (-phi[p], p))
    total = float(phi.sum())
    rows = []
    running = 0.0
    for p in order:
        running += phi[p]
        share = running / total if total else 0.0
        rows.append((p, float(phi[p]), float(share)))
    return rows


def report_to_csv(rows: Iterable[tuple[int, float, float]], positions: Sequence[int] | None = None) -> str:
    """Render an attribution report; ``positions`` relabels player indices."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["position", "phi", "cumulative_share"])
    for player, phi, share in rows:
        label = positions[player] if positions is not None else player
        writer.writerow([label, repr(phi), repr(share)])
    return buf.getvalue()


# -- running vector ----------------------------------------------------------


@dataclass
class ShapleyVector:
    phi: np.ndarray

    @classmethod
    def zeros(cls, length: int) -> ShapleyVector:
        if length < 1:
            raise ValueError(f"Shapley vector length must be positive, got {length}")
        return cls(np.zeros(length, dtype=np.float64))

    @property
    def length(self) -> int:
        return len(self.phi)

    def positive_positions(self) -> np.ndarray:
        return np.flatnonzero(self.phi > 0)

    def copy(self) -> ShapleyVector:
        return ShapleyVector(self.phi.copy())


@dataclass
class RecoveryVerdict:
    mutated_positions: list[int]
    redundant: list[int]
    necessary: list[int]
    gain: int
    self_new: frozenset = frozenset()
    # mutated buffer with every redundant byte restored
    minimized: bytes = b""
    degenerate: bool = False

    def remap(self, mapping: Sequence[int]) -> RecoveryVerdict:
        """Same verdict with positions translated through ``mapping``."""
        return RecoveryVerdict(
            mutated_positions=[int(mapping[p]) for p in self.mutated_positions],
            redundant=[int(mapping[p]) for p in self.redundant],
            necessary=[int(mapping[p]) for p in self.necessary],
            gain=self.gain,
            self_new=self.self_new,
            minimized=self.minimized,
            degenerate=self.degenerate,
        )


def incremental_update(vec: ShapleyVector, verdict: RecoveryVerdict) -> ShapleyVector:
    """Return a new vector with ``verdict.gain`` added at each necessary position."""
    for p in (*verdict.necessary, *verdict.redundant):
        if not 0 <= p < vec.length:
            raise IndexError(f"position {p} outside Shapley vector of length {vec.length}")
    out = vec.copy()
    if verdict.gain <= 0 or verdict.degenerate:
        return out
    for p in verdict.necessary:
        out.phi[p] += verdict.gain
    return out


def recovery_analysis(
    original: bytes,
    mutated: bytes,
    target: Callable[[bytes], ExecutionResult],
    family_baseline: CoverageMap,
    result: ExecutionResult | None = None,
) -> RecoveryVerdict:
    """Split the bytes a gainful mutation changed into redundant and necessary.

    Differing positions are visited in ascending order. A position is
    redundant if restoring its original byte still yields exactly the same
    self-new edge set; the restoration is then kept, so later checks run on
    the progressively reduced buffer. Everything not redundant is necessary.
    The baseline is only read.
    """
    if len(original) != len(mutated):
        raise StructuralError(f"recovery needs equal lengths, got {len(original)} and {len(mutated)}")
    if result is None:
        result = target(mutated)
    wanted = diff_new(result.edges, family_baseline)
    if not wanted:
        raise ValueError("recovery analysis requires a mutation with self-new edges")

    differing = [i for i, (a, b) in enumerate(zip(original, mutated)) if a != b]
    current = bytearray(mutated)
    redundant: list[int] = []
    necessary: list[int] = []
    for p in differing:
        current[p] = original[p]
        if diff_new(target(bytes(current)).edges, family_baseline) == wanted:
            redundant.append(p)
        else:
            current[p] = mutated[p]
            necessary.append(p)

    degenerate = not necessary
    if degenerate:
        log.warning(
            "gain of %d self-new edges survives restoring all %d mutated bytes; skipping attribution",
            len(wanted),
            len(differing),
        )
    return RecoveryVerdict(
        mutated_positions=differing,
        redundant=redundant,
        necessary=necessary,
        gain=len(wanted),
        self_new=wanted,
        minimized=bytes(current),
        degenerate=degenerate,
    )
