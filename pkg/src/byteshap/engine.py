"""The fuzzing campaign loop.

One ``Campaign`` owns the corpus, the families, the global coverage map and
the bandit arms. ``step`` runs exactly one mutated input; ``run`` loops it
under exec/time limits and persists results.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import random
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from byteshap import bandit
from byteshap.coverage import CoverageMap, absorb, diff_new
from byteshap.errors import ExecutionError, StructuralError
from byteshap.family import (
    Family,
    IdAllocator,
    MutatorStack,
    Seed,
    found_family,
    trim_ranges,
    trim_track,
    try_admit,
    withdraw,
    write_corpus,
)
from byteshap.mutation import (
    STARVATION_EXECS,
    Mode,
    ModeStats,
    MutationPlan,
    MutatorMenu,
    PositionSampler,
    draw_n_sub,
    havoc_once,
    pick_mode,
)
from byteshap.shapley import incremental_update, recovery_analysis
from byteshap.targets import ExecutionResult

log = logging.getLogger(__name__)

Target = Callable[[bytes], ExecutionResult]

MODES = ("auto", "shapley", "random")


@dataclass
class EngineConfig:
    max_execs: int | None = None
    max_seconds: float | None = None
    rng_seed: int = 0
    mode: str = "auto"
    energy: int = 256
    centers: int = bandit.DEFAULT_CENTERS
    alpha_ucb: float = bandit.DEFAULT_ALPHA
    menu: MutatorMenu = field(default_factory=MutatorMenu)
    trim: bool = False
    center_refresh: int = 256
    stats_every: int = 1024
    starvation: int = STARVATION_EXECS
    wall_clock: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.energy < 1:
            raise ValueError(f"energy must be at least 1, got {self.energy}")
        if self.centers < 1:
            raise ValueError(f"centers must be at least 1, got {self.centers}")
        if self.alpha_ucb < 0:
            raise ValueError(f"alpha_ucb must be non-negative, got {self.alpha_ucb}")
        if self.max_execs is not None and self.max_execs < 0:
            raise ValueError(f"max_execs must be non-negative, got {self.max_execs}")


@dataclass(frozen=True)
class StatsRow:
    execs: int
    unique_edges: int
    n_seeds: int
    n_families: int
    guided_cost: float
    random_cost: float
    wall_ms: int

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_csv(self) -> list[str]:
        return [
            str(self.execs),
            str(self.unique_edges),
            str(self.n_seeds),
            str(self.n_families),
            f"{self.guided_cost:.6f}",
            f"{self.random_cost:.6f}",
            str(self.wall_ms),
        ]


def assign_energy(seed: Seed, config: EngineConfig) -> int:
    return max(1, config.energy)


class Campaign:
    def __init__(self, target: Target, initial_seeds: Iterable[bytes], config: EngineConfig | None = None):
        self.target = target
        self.config = config or EngineConfig()
        self.rng = random.Random(self.config.rng_seed)
        self.global_map = CoverageMap()
        self.mode_stats = ModeStats()
        self.execs = 0
        self.errors = 0
        self.seeds: dict[int, Seed] = {}
        self.order: list[int] = []
        self.families: dict[int, Family] = {}
        self.arms: dict[int, dict[int, bandit.ArmState]] = {}
        self.first_seen: dict[int, int] = {}
        self.crashes: list[tuple[int, bytes]] = []
        self._crash_hashes: set[str] = set()
        self._seed_ids = IdAllocator()
        self._family_ids = IdAllocator()
        self._started = time.monotonic()

        self.centers: bandit.CenterSet | None = None
        self._seeds_since_centers = 0

        self._cursor = -1
        self._energy_left = 0
        self._cycle_seed: Seed | None = None

        self._dry_run(initial_seeds)

    # -- setup ---------------------------------------------------------------

    def _dry_run(self, initial_seeds: Iterable[bytes]) -> None:
        for data in initial_seeds:
            if not data:
                log.warning("skipping empty initial seed")
                continue
            try:
                result = self.target(bytes(data))
            except ExecutionError as exc:
                log.warning("initial seed failed to execute: %s", exc)
                self.errors += 1
                continue
            self._found(bytes(data), result)
        if not self.order:
            raise ValueError("no usable initial seeds")
        self._refresh_centers()

    def _found(self, data: bytes, result: ExecutionResult) -> Seed:
        family, seed = found_family(
            data, result.edges, family_id=self._family_ids(), seed_id=self._seed_ids(), retained_at=self.execs
        )
        self.families[family.id] = family
        self.arms[family.id] = {}
        self._add_seed(seed)
        self._absorb_global(result.edges)
        self._record_crash(data, result)
        return seed

    def _add_seed(self, seed: Seed) -> None:
        self.seeds[seed.id] = seed
        self.order.append(seed.id)
        self._seeds_since_centers += 1
        if self.centers is not None and self._seeds_since_centers >= self.config.center_refresh:
            self._refresh_centers()

    def _refresh_centers(self) -> None:
        paths = [(sid, self.seeds[sid].edge_set) for sid in self.order]
        self.centers = bandit.select_centers(paths, self.config.centers)
        self._seeds_since_centers = 0

    def _absorb_global(self, edges: frozenset[int]) -> int:
        new = diff_new(edges, self.global_map)
        for e in sorted(new):
            self.first_seen[e] = self.execs
        return absorb(self.global_map, new)

    def _record_crash(self, data: bytes, result: ExecutionResult) -> None:
        if not result.crashed:
            return
        digest = hashlib.sha1(data).hexdigest()
        if digest not in self._crash_hashes:
            self._crash_hashes.add(digest)
            self.crashes.append((self.execs, data))

    # -- scheduling ----------------------------------------------------------

    def _begin_cycle(self) -> None:
        self._cursor = (self._cursor + 1) % len(self.order)
        seed = self.seeds[self.order[self._cursor]]
        self._cycle_seed = seed
        self._energy_left = assign_energy(seed, self.config)

    def position_distribution(self, family_id: int, features: np.ndarray) -> np.ndarray | None:
        """Selection probabilities over the family's positions, or None if no position has credit."""
        family = self.families[family_id]
        positive = family.shapley.positive_positions()
        if positive.size == 0:
            return None
        arms = self.arms[family_id]
        batch = []
        for p in positive:
            arm = arms.get(int(p))
            if arm is None:
                arm = arms[int(p)] = bandit.ArmState.fresh(self.config.centers)
            batch.append(arm)
        scores = bandit.score_many(batch, features, self.config.alpha_ucb)
        dist = np.zeros(family.original_length, dtype=np.float64)
        dist[positive] = bandit.selection_distribution(scores)
        return dist

    def _guided_sampler(self, seed: Seed, features: np.ndarray) -> PositionSampler | None:
        dist = self.position_distribution(seed.family_id, features)
        if dist is None:
            return None
        sampler = PositionSampler(dist, seed.map_vector)
        return None if sampler.degenerate else sampler

    def _choose_mode(self) -> Mode:
        if self.config.mode == "random":
            return Mode.RANDOM
        if self.config.mode == "shapley":
            return Mode.SHAPLEY
        return pick_mode(self.mode_stats, self.config.starvation)

    def _reward_arms(self, family: Family, features: np.ndarray, selected: set[int], rewards: dict[int, float]) -> None:
        arms = self.arms[family.id]
        for p in sorted(selected | set(rewards)):
            if family.shapley.phi[p] <= 0:
                continue
            arm = arms.get(p) or bandit.ArmState.fresh(self.config.centers)
            arms[p] = bandit.update_arm(arm, features, rewards.get(p, 0.0))

    # -- the loop ------------------------------------------------------------

    def step(self) -> int:
        """Mutate, execute and learn from one input. Returns the number of seeds retained."""
        if self._energy_left <= 0:
            self._begin_cycle()
        seed = self._cycle_seed
        family = self.families[seed.family_id]
        mode = self._choose_mode()
        features = sampler = None
        if mode is Mode.SHAPLEY:
            features = bandit.featurize(seed.edge_set, self.centers)
            sampler = self._guided_sampler(seed, features)
            if sampler is None:
                mode = Mode.RANDOM
        plan = MutationPlan(mode, draw_n_sub(self.rng), self.rng, self.config.menu)
        stack = MutatorStack()
        mutated = havoc_once(seed.bytes, plan, sampler, stack, seed.map_vector)
        self.execs += 1
        self._energy_left -= 1
        seed.exec_count += 1
        selected = set()
        if mode is Mode.SHAPLEY:
            selected = {seed.map_vector[p] for p in stack.overwritten_positions()}

        rewards: dict[int, float] = {}
        try:
            result = self.target(mutated)
            grew = bool(diff_new(result.edges, self.global_map))
            self_new = diff_new(result.edges, family.local_map)
            # family-local gains earn credit; only global growth keeps the input
            retained = self._learn(seed, family, mutated, stack, result, self_new, grew, rewards) if self_new else 0
        except ExecutionError as exc:
            log.debug("execution failed at exec %d: %s", self.execs, exc)
            self.errors += 1
            self.mode_stats.record(mode, False)
            return 0
        if selected or rewards:
            if features is None:
                features = bandit.featurize(seed.edge_set, self.centers)
            self._reward_arms(family, features, selected, rewards)
        self._record_crash(mutated, result)
        self._absorb_global(result.edges)
        self.mode_stats.record(mode, grew)
        return retained

    def _learn(
        self,
        seed: Seed,
        family: Family,
        mutated: bytes,
        stack: MutatorStack,
        result: ExecutionResult,
        self_new: frozenset[int],
        retain: bool,
        rewards: dict[int, float],
    ) -> int:
        """Credit positions for a family-local gain; retain the input if ``retain``.

        Attribution runs on the input itself, or on its withdrawn form when
        length mutators were used and withdrawal keeps the self-new edges.
        """
        analyzed, analyzed_result = None, None
        if not stack.changes_length:
            analyzed, analyzed_result = mutated, result
        else:
            try:
                candidate = withdraw(mutated, stack)
            except StructuralError as exc:
                log.debug("withdrawal failed: %s", exc)
                candidate = None
            if candidate is not None and len(candidate) == len(seed.bytes):
                candidate_result = self.target(candidate)
                if self_new <= candidate_result.edges:
                    analyzed, analyzed_result = candidate, candidate_result

        if analyzed is not None:
            verdict = recovery_analysis(seed.bytes, analyzed, self.target, family.local_map, analyzed_result)
            if not verdict.degenerate:
                fam_verdict = verdict.remap(seed.map_vector)
                family.shapley = incremental_update(family.shapley, fam_verdict)
                for p in fam_verdict.necessary:
                    rewards[p] = rewards.get(p, 0.0) + fam_verdict.gain

        admitted = None
        if retain and analyzed is not None:
            admitted = try_admit(
                family, analyzed, seed, self_new, self.target, self._seed_ids,
                retained_at=self.execs, result=analyzed_result,
            )
        # the family has now seen these edges whether or not it keeps the input
        absorb(family.local_map, result.edges)
        if not retain:
            return 0
        if admitted is None:
            self._found(mutated, result)
            return 1
        if self.config.trim:
            admitted = self._trim(admitted)
        self._add_seed(admitted)
        return 1

    def _trim(self, seed: Seed) -> Seed:
        ranges = trim_ranges(seed.bytes, seed.edge_set, self.target)
        if sum(e - s for s, e in ranges) == len(seed.bytes):
            return seed
        return trim_track(seed, ranges)

    # -- reporting -----------------------------------------------------------

    def stats_row(self) -> StatsRow:
        wall = int((time.monotonic() - self._started) * 1000) if self.config.wall_clock else 0
        return StatsRow(
            execs=self.execs,
            unique_edges=len(self.global_map),
            n_seeds=len(self.order),
            n_families=len(self.families),
            guided_cost=self.mode_stats.guided.cost,
            random_cost=self.mode_stats.random.cost,
            wall_ms=wall,
        )

    def corpus(self) -> list[Seed]:
        return [self.seeds[sid] for sid in self.order]

    def run(
        self,
        out_dir: str | os.PathLike | None = None,
        stop: Callable[[Campaign], bool] | None = None,
    ) -> StatsRow:
        """Step until a limit is hit (or ``stop`` returns True); persist if ``out_dir`` is given.

        Writes ``stats.csv``, ``corpus/`` and ``crashes/`` under ``out_dir``.
        """
        cfg = self.config
        self._started = time.monotonic()
        deadline = None if not cfg.max_seconds else self._started + cfg.max_seconds
        sink = writer = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                sink = open(out_dir / "stats.csv", "w", newline="")
            except OSError as exc:
                raise OSError(f"cannot write campaign output under {out_dir}: {exc}") from exc
            writer = csv.writer(sink, lineterminator="\n")
            writer.writerow(StatsRow.header())
        self.rows: list[StatsRow] = []
        try:
            while True:
                if cfg.max_execs is not None and self.execs >= cfg.max_execs:
                    break
                if deadline is not None and time.monotonic() >= deadline:
                    break
                if stop is not None and stop(self):
                    break
                self.step()
                if self.execs % cfg.stats_every == 0:
                    self._emit(writer, sink)
            final = self.stats_row()
            if not self.rows or self.rows[-1].execs != final.execs:
                self._emit(writer, sink, final)
            else:
                final = self.rows[-1]
        finally:
            if sink is not None:
                sink.close()
        if out_dir is not None:
            self.persist(out_dir)
        return final

    def _emit(self, writer, sink, row: StatsRow | None = None) -> None:
        row = row or self.stats_row()
        self.rows.append(row)
        if writer is not None:
            writer.writerow(row.as_csv())
            sink.flush()

    def persist(self, out_dir: str | os.PathLike) -> None:
        out_dir = Path(out_dir)
        try:
            write_corpus(out_dir / "corpus", list(self.families.values()), self.corpus())
            crash_dir = out_dir / "crashes"
            crash_dir.mkdir(parents=True, exist_ok=True)
            for at, data in self.crashes:
                name = f"crash_{at:09d}_{hashlib.sha1(data).hexdigest()[:12]}.bin"
                (crash_dir / name).write_bytes(data)
        except OSError as exc:
            raise OSError(f"cannot persist campaign under {out_dir}: {exc}") from exc
