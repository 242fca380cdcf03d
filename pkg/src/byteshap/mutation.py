"""Havoc mutation with optional Shapley-guided position choice, and the mode scheduler."""

from __future__ import annotations

import enum
import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from byteshap.family import Delete, Insert, MutatorStack, Overwrite

log = logging.getLogger(__name__)

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
ARITH_MAX = 35
MAX_BLOCK = 32
MAX_INPUT_LEN = 1 << 16
STACK_POW2 = 7  # n_sub in {1, 2, ..., 64}
STARVATION_EXECS = 4096


class Mode(str, enum.Enum):
    SHAPLEY = "shapley_guided"
    RANDOM = "random"


class ValueOp(str, enum.Enum):
    BITFLIP = "bitflip"
    SET_BYTE = "set_byte"
    ARITH = "arith"
    INTERESTING = "interesting"


class LengthOp(str, enum.Enum):
    INSERT = "insert"
    DELETE = "delete"


@dataclass
class MutatorMenu:
    value_ops: tuple[ValueOp, ...] = tuple(ValueOp)
    length_ops: tuple[LengthOp, ...] = tuple(LengthOp)
    # chance that a random-mode sub-mutation is a length edit
    length_prob: float = 0.25

    def __post_init__(self):
        if not self.value_ops:
            raise ValueError("mutator menu needs at least one value mutator")
        if not 0.0 <= self.length_prob <= 1.0:
            raise ValueError(f"length_prob must be in [0, 1], got {self.length_prob}")


@dataclass
class MutationPlan:
    mode: Mode
    n_sub: int
    rng: random.Random
    menu: MutatorMenu = field(default_factory=MutatorMenu)

    def __post_init__(self):
        if not 1 <= self.n_sub <= 64:
            raise ValueError(f"n_sub must be in [1, 64], got {self.n_sub}")


def draw_n_sub(rng: random.Random) -> int:
    return 1 << rng.randrange(STACK_POW2)


def _value_mutate(byte: int, op: ValueOp, rng: random.Random) -> int:
    if op is ValueOp.BITFLIP:
        return byte ^ (1 << rng.randrange(8))
    if op is ValueOp.SET_BYTE:
        return rng.randrange(256)
    if op is ValueOp.ARITH:
        delta = rng.randint(1, ARITH_MAX)
        return (byte + delta if rng.random() < 0.5 else byte - delta) & 0xFF
    return rng.choice(INTERESTING_8) & 0xFF


class PositionSampler:
    """Draws local positions for guided mode from a family-position distribution.

    Family positions the seed no longer holds (trimmed away) are dropped and
    the rest renormalized, which is what redrawing on a miss converges to.
    """

    def __init__(self, family_dist: Sequence[float] | np.ndarray, map_vector: Sequence[int]):
        dist = np.asarray(family_dist, dtype=np.float64)
        local, weights = [], []
        for loc, fam in enumerate(map_vector):
            if fam < len(dist) and dist[fam] > 0:
                local.append(loc)
                weights.append(dist[fam])
        self.local = local
        self.cum_weights = list(np.cumsum(weights)) if weights else []
        self.degenerate = not local

    def draw(self, rng: random.Random) -> int:
        return rng.choices(self.local, cum_weights=self.cum_weights)[0]


def havoc_once(
    data: bytes,
    plan: MutationPlan,
    position_dist: Sequence[float] | np.ndarray | PositionSampler | None,
    stack: MutatorStack,
    map_vector: Sequence[int] | None = None,
) -> bytes:
    """Apply ``plan.n_sub`` stacked sub-mutations, logging each one on ``stack``.

    In guided mode every sub-mutation is a single-byte value edit at a
    position drawn from ``position_dist`` (indexed by family position and
    mapped through ``map_vector``). Random mode draws positions uniformly and
    may also insert or delete blocks.
    """
    if not data:
        raise ValueError("cannot mutate an empty input")
    rng = plan.rng
    menu = plan.menu
    buf = bytearray(data)
    sampler = None
    if plan.mode is Mode.SHAPLEY:
        if position_dist is None:
            raise ValueError("guided mutation needs a position distribution")
        if isinstance(position_dist, PositionSampler):
            sampler = position_dist
        else:
            sampler = PositionSampler(position_dist, map_vector if map_vector is not None else range(len(data)))
        if sampler.degenerate:
            log.warning("no probability mass on positions present in this seed; falling back to uniform positions")
            sampler = None

    for _ in range(plan.n_sub):
        if plan.mode is Mode.RANDOM and menu.length_ops and rng.random() < menu.length_prob:
            op = rng.choice(menu.length_ops)
            if op is LengthOp.INSERT and len(buf) < MAX_INPUT_LEN:
                pos = rng.randrange(len(buf) + 1)
                block = bytes(rng.randrange(256) for _ in range(rng.randint(1, MAX_BLOCK)))
                buf[pos:pos] = block
                stack.push(Insert(pos, block))
                continue
            if op is LengthOp.DELETE and len(buf) > 1:
                size = rng.randint(1, min(MAX_BLOCK, len(buf) - 1))
                pos = rng.randrange(len(buf) - size + 1)
                removed = bytes(buf[pos:pos + size])
                del buf[pos:pos + size]
                stack.push(Delete(pos, removed))
                continue
            # edit not possible at this size: fall through to a value edit
        pos = sampler.draw(rng) if sampler is not None else rng.randrange(len(buf))
        old = buf[pos]
        buf[pos] = _value_mutate(old, rng.choice(menu.value_ops), rng)
        stack.push(Overwrite(pos, bytes([old]), bytes([buf[pos]])))
    return bytes(buf)


@dataclass
class ModeCounter:
    execs: int = 0
    new_paths: int = 0

    @property
    def cost(self) -> float:
        return (self.execs + 1) / (self.new_paths + 1)


@dataclass
class ModeStats:
    guided: ModeCounter = field(default_factory=ModeCounter)
    random: ModeCounter = field(default_factory=ModeCounter)
    # campaign exec count at which each mode last ran
    last_used: dict = field(default_factory=lambda: {Mode.SHAPLEY: 0, Mode.RANDOM: 0})
    clock: int = 0

    def counter(self, mode: Mode) -> ModeCounter:
        return self.guided if mode is Mode.SHAPLEY else self.random

    def record(self, mode: Mode, new_path: bool) -> None:
        c = self.counter(mode)
        c.execs += 1
        c.new_paths += int(new_path)
        self.clock += 1
        self.last_used[mode] = self.clock


def pick_mode(stats: ModeStats, starvation: int = STARVATION_EXECS) -> Mode:
    """Cheaper mode by smoothed execs-per-new-path; a mode idle for ``starvation`` execs runs once."""
    for mode in (Mode.SHAPLEY, Mode.RANDOM):
        if stats.clock - stats.last_used[mode] >= starvation:
            return mode
    if stats.guided.cost <= stats.random.cost:
        return Mode.SHAPLEY
    return Mode.RANDOM
