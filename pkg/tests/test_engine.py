import csv

import pytest

from byteshap.engine import Campaign, EngineConfig, StatsRow, assign_energy
from byteshap.errors import ExecutionError
from byteshap.family import load_corpus
from byteshap.mutation import MutatorMenu
from byteshap.targets import CC_A, ExecutionResult, Verdict, run_coupled_checker, run_magic_chain

from conftest import ScriptedTarget


def config(**kw):
    kw.setdefault("wall_clock", False)
    return EngineConfig(**kw)


class TestConfig:
    def test_defaults(self):
        cfg = EngineConfig()
        assert (cfg.energy, cfg.centers, cfg.alpha_ucb, cfg.mode) == (256, 10, 0.5, "auto")

    @pytest.mark.parametrize("bad", [dict(mode="greedy"), dict(alpha_ucb=-0.1), dict(energy=0), dict(centers=0)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            EngineConfig(**bad)

    def test_energy_constant(self):
        assert assign_energy(None, EngineConfig()) == 256
        assert assign_energy(None, EngineConfig(energy=7)) == 7


class TestStep:
    def test_gainless_execution(self):
        target = ScriptedTarget(lambda d: {0})
        c = Campaign(target, [b"abcdefgh"], config(max_execs=100))
        c.run()
        assert c.execs == 100
        assert len(c.order) == 1 and len(c.families) == 1
        assert not c.families[0].shapley.phi.any()
        assert c.mode_stats.guided.execs + c.mode_stats.random.execs == 100

    def test_length_preserving_gain_joins_family(self):
        # any nonzero first byte reaches edge 1
        target = ScriptedTarget(lambda d: {0} | ({1} if d[0] else set()))
        c = Campaign(target, [bytes(4)], config(max_execs=2000, mode="random", menu=MutatorMenu(length_ops=())))
        c.run(stop=lambda c: 1 in c.global_map.seen)
        assert len(c.families) == 1
        fam = c.families[0]
        assert len(fam.members) == 2
        assert fam.shapley.phi[0] > 0 and not fam.shapley.phi[1:].any()
        assert 1 in fam.local_map.seen

    def test_failed_withdrawal_founds_family(self):
        # edge 5 only exists for longer inputs, so withdrawal always loses it
        target = ScriptedTarget(lambda d: {0} | ({5} if len(d) > 8 else set()))
        c = Campaign(target, [bytes(8)], config(max_execs=5000, mode="random"))
        c.run(stop=lambda c: 5 in c.global_map.seen)
        assert len(c.families) == 2
        new = c.families[1]
        assert new.original_length > 8
        assert not new.shapley.phi.any()

    def test_execution_errors_are_counted(self):
        def flaky(data):
            if data[0] == 0xFF:
                raise ExecutionError("boom")
            return {0}

        c = Campaign(ScriptedTarget(flaky), [bytes(4)], config(max_execs=3000, mode="random"))
        c.run()
        assert c.execs == 3000
        assert c.errors > 0

    def test_no_usable_seed(self):
        with pytest.raises(ValueError):
            Campaign(ScriptedTarget(lambda d: {0}), [b""], config())

    def test_random_mode_never_guided(self):
        c = Campaign(run_coupled_checker, [bytes(16)], config(max_execs=3000, mode="random"))
        c.run()
        assert c.mode_stats.guided.execs == 0

    def test_auto_uses_guided_once_credit_exists(self):
        c = Campaign(run_coupled_checker, [bytes(16)], config(max_execs=5000, rng_seed=3))
        c.run()
        assert CC_A in c.global_map.seen
        assert c.mode_stats.guided.execs > 0


class TestInvariants:
    def test_family_lengths_and_maps(self):
        c = Campaign(run_coupled_checker, [bytes(16), bytes(24)], config(max_execs=8000, rng_seed=11))
        c.run()
        for fam in c.families.values():
            for sid in fam.members:
                seed = c.seeds[sid]
                assert seed.family_id == fam.id
                assert len(seed.bytes) == fam.original_length
                assert seed.map_vector == tuple(range(fam.original_length))
        assert sorted(sid for f in c.families.values() for sid in f.members) == sorted(c.order)

    def test_trim_keeps_maps_consistent(self):
        c = Campaign(run_magic_chain, [bytes(40)], config(max_execs=6000, rng_seed=2, trim=True))
        c.run()
        for seed in c.corpus():
            fam = c.families[seed.family_id]
            assert len(seed.map_vector) == len(seed.bytes)
            assert all(0 <= m < fam.original_length for m in seed.map_vector)
            assert list(seed.map_vector) == sorted(set(seed.map_vector))

    def test_first_seen_and_global_map_agree(self):
        c = Campaign(run_coupled_checker, [bytes(16)], config(max_execs=4000, rng_seed=5))
        c.run()
        assert set(c.first_seen) == c.global_map.seen


class TestRun:
    def test_writes_outputs(self, tmp_path):
        c = Campaign(run_coupled_checker, [bytes(16)], config(max_execs=3000, stats_every=1000))
        final = c.run(tmp_path)
        rows = list(csv.reader((tmp_path / "stats.csv").read_text().splitlines()))
        assert rows[0] == StatsRow.header()
        assert [int(r[0]) for r in rows[1:]] == [1000, 2000, 3000]
        assert final.execs == 3000
        edges = [int(r[1]) for r in rows[1:]]
        assert edges == sorted(edges)
        families, seeds = load_corpus(tmp_path / "corpus")
        assert len(seeds) == final.n_seeds and len(families) == final.n_families
        assert (tmp_path / "crashes").is_dir()

    def test_crash_saved(self, tmp_path):
        def target(data):
            return ExecutionResult(frozenset({0, 1} if data[0] == 7 else {0}), Verdict.CRASH if data[0] == 7 else Verdict.OK)

        c = Campaign(target, [bytes(4)], config(max_execs=4000, mode="random"))
        c.run(tmp_path)
        crashes = list((tmp_path / "crashes").iterdir())
        assert crashes and all(p.read_bytes()[0] == 7 for p in crashes)

    def test_deterministic(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            c = Campaign(run_coupled_checker, [bytes(16)], config(max_execs=6000, rng_seed=42))
            c.run(tmp_path / name)
            outs.append(tmp_path / name)
        a, b = outs
        assert (a / "stats.csv").read_bytes() == (b / "stats.csv").read_bytes()
        names = sorted(p.name for p in (a / "corpus").iterdir())
        assert names == sorted(p.name for p in (b / "corpus").iterdir())
        for n in names:
            assert (a / "corpus" / n).read_bytes() == (b / "corpus" / n).read_bytes()

    def test_time_limit(self):
        c = Campaign(run_coupled_checker, [bytes(16)], EngineConfig(max_seconds=0.2))
        final = c.run()
        assert final.execs > 0
