"""Command-line entry point: ``run``, ``attribute`` and ``stats``.

Exit codes: 0 success, 1 runtime failure (target or I/O), 2 usage or bad input.
Diagnostics go to stderr; ``attribute`` and ``stats`` print to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from byteshap import bandit
from byteshap.coverage import CoverageMap, gain
from byteshap.engine import MODES, Campaign, EngineConfig, StatsRow
from byteshap.errors import ExecutionError
from byteshap.mutation import MutatorMenu
from byteshap.shapley import MAX_EXACT_PLAYERS, attribution_report, report_to_csv
from byteshap.targets import DEFAULT_TIMEOUT_MS, resolve_target

log = logging.getLogger("byteshap")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad flags or unusable input files; maps to exit status 2."""


def _target(name: str, timeout_ms: int, workdir=None):
    try:
        return resolve_target(name, workdir, timeout_ms)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_seeds(seeds_dir: str) -> list[bytes]:
    """Every regular file in ``seeds_dir``, in name order."""
    path = Path(seeds_dir)
    if not path.is_dir():
        raise UsageError(f"seed directory {seeds_dir} does not exist or is not a directory")
    try:
        files = sorted(p for p in path.iterdir() if p.is_file())
        seeds = [p.read_bytes() for p in files]
    except OSError as exc:
        raise UsageError(f"cannot read seed directory {seeds_dir}: {exc}") from None
    if not any(seeds):
        raise UsageError(f"seed directory {seeds_dir} holds no non-empty files")
    return seeds


# -- run ---------------------------------------------------------------------


def cmd_run(args) -> int:
    seeds = load_seeds(args.seeds)
    try:
        menu = MutatorMenu(length_prob=args.length_prob)
        config = EngineConfig(
            max_execs=args.max_execs,
            max_seconds=args.max_seconds,
            rng_seed=args.rng_seed,
            mode=args.mode,
            energy=args.energy,
            centers=args.centers,
            alpha_ucb=args.alpha_ucb,
            menu=menu,
            trim=args.trim,
            wall_clock=not args.no_wall_clock,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if config.max_execs is None and not config.max_seconds:
        raise UsageError("give --max-execs or --max-seconds, or the campaign never stops")
    out = Path(args.out)
    target = _target(args.target, args.timeout_ms, out / "scratch")
    try:
        campaign = Campaign(target, seeds, config)
    except ValueError as exc:
        # every initial seed failed to execute
        log.error("%s", exc)
        return EXIT_RUNTIME
    final = campaign.run(out)
    print(
        f"execs={final.execs} edges={final.unique_edges} seeds={final.n_seeds} "
        f"families={final.n_families} crashes={len(campaign.crashes)} errors={campaign.errors}",
        file=sys.stderr,
    )
    return EXIT_OK


# -- attribute ---------------------------------------------------------------


def parse_positions(text: str) -> list[int]:
    """``"0-7"``, ``"1,4,9"`` or a mix like ``"0-3,8"``; duplicates rejected."""
    positions: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise ValueError
                positions.extend(range(lo, hi + 1))
            else:
                positions.append(int(part))
        except ValueError:
            raise UsageError(f"bad position list entry {part!r}") from None
    if not positions:
        raise UsageError("no positions given")
    if len(set(positions)) != len(positions):
        raise UsageError("position list contains duplicates")
    if min(positions) < 0:
        raise UsageError("positions must be non-negative")
    return positions


def attribution_game(seed: bytes, positions: list[int], probe: bytes, target):
    """fn(S) = edges gained over the seed when exactly the positions in S take their probe byte."""
    baseline = CoverageMap.from_edges(target(seed).edges)
    cache: dict[frozenset, float] = {}

    def fn(coalition: frozenset) -> float:
        if coalition not in cache:
            buf = bytearray(seed)
            for player in coalition:
                buf[positions[player]] = probe[player]
            cache[coalition] = float(gain(baseline, target(bytes(buf)).edges))
        return cache[coalition]

    return fn


def cmd_attribute(args) -> int:
    positions = parse_positions(args.positions)
    if len(positions) > MAX_EXACT_PLAYERS:
        raise UsageError(f"{len(positions)} positions requested; exact attribution handles at most {MAX_EXACT_PLAYERS}")
    try:
        seed = Path(args.seed_file).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read seed file: {exc}") from None
    if max(positions) >= len(seed):
        raise UsageError(f"position {max(positions)} is past the end of a {len(seed)}-byte seed")

    if args.probe_file is not None:
        try:
            probe_src = Path(args.probe_file).read_bytes()
        except OSError as exc:
            raise UsageError(f"cannot read probe file: {exc}") from None
        if max(positions) >= len(probe_src):
            raise UsageError(f"probe file has no byte for position {max(positions)}")
        probe = bytes(probe_src[p] for p in positions)
    else:
        probe = bytes([args.probe]) * len(positions)

    with tempfile.TemporaryDirectory(prefix="byteshap_attr_") as scratch:
        target = _target(args.target, args.timeout_ms, scratch)
        fn = attribution_game(seed, positions, probe, target)
        rows = attribution_report(fn, len(positions))
    sys.stdout.write(report_to_csv(rows, positions))
    return EXIT_OK


# -- stats -------------------------------------------------------------------


def read_stats(path: Path) -> list[StatsRow]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise UsageError(f"no stats file at {path}") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    lines = list(csv.reader(text.splitlines()))
    if not lines:
        raise UsageError(f"{path} is empty")
    header = StatsRow.header()
    if lines[0] != header:
        raise UsageError(f"{path}:1: unexpected header {','.join(lines[0])}")
    rows = []
    for lineno, fields in enumerate(lines[1:], 2):
        if not fields:
            continue
        try:
            if len(fields) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(fields)}")
            rows.append(
                StatsRow(
                    execs=int(fields[0]),
                    unique_edges=int(fields[1]),
                    n_seeds=int(fields[2]),
                    n_families=int(fields[3]),
                    guided_cost=float(fields[4]),
                    random_cost=float(fields[5]),
                    wall_ms=int(fields[6]),
                )
            )
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: corrupted row: {exc}") from None
    if not rows:
        raise UsageError(f"{path} has a header but no rows")
    return rows


def top_positions(phi: list[float], k: int = 10) -> list[tuple[int, float]]:
    arr = np.asarray(phi, dtype=np.float64)
    order = sorted(np.flatnonzero(arr > 0), key=lambda p: (-arr[p], p))
    return [(int(p), float(arr[p])) for p in order[:k]]


def cmd_stats(args) -> int:
    out = Path(args.out_dir)
    rows = read_stats(out / "stats.csv")
    final = rows[-1]
    for name, value in zip(StatsRow.header(), final.as_csv()):
        print(f"{name}: {value}")

    meta_path = out / "corpus" / "families.json"
    if not meta_path.exists():
        print("families: unknown (no corpus/families.json)")
        return EXIT_OK
    try:
        meta = json.loads(meta_path.read_text())
        families = meta["families"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read {meta_path}: {exc}") from None
    print(f"families: {len(families)}")
    for fam in families:
        top = top_positions(fam["phi"])
        ranked = " ".join(f"{p}:{v:g}" for p, v in top) if top else "-"
        print(f"  family {fam['id']} (len {fam['original_length']}, {len(fam['members'])} seeds): {ranked}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _byte(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= 255:
        raise argparse.ArgumentTypeError(f"probe byte must be in 0..255, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byteshap",
        description="Coverage-guided fuzzing with Shapley-credited byte selection.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    target_help = "builtin target name (coupled_checker, magic_chain) or a command containing @@"

    run = sub.add_parser("run", help="run a fuzzing campaign", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    run.add_argument("--target", required=True, help=target_help)
    run.add_argument("--seeds", required=True, help="directory of initial seed files")
    run.add_argument("--out", required=True, help="output directory for stats.csv, corpus/ and crashes/")
    run.add_argument("--max-execs", type=int, default=None, help="stop after this many mutated executions")
    run.add_argument("--max-seconds", type=float, default=None, help="stop after this much wall time")
    run.add_argument("--rng-seed", type=int, default=0)
    run.add_argument("--mode", choices=MODES, default="auto", help="auto lets the cost scheduler pick per exec")
    run.add_argument("--energy", type=int, default=256, help="mutations per seed selection")
    run.add_argument("--centers", type=int, default=bandit.DEFAULT_CENTERS, help="context dimension (center paths)")
    run.add_argument("--alpha-ucb", type=float, default=bandit.DEFAULT_ALPHA, help="LinUCB exploration weight")
    run.add_argument("--length-prob", type=float, default=0.25, help="chance a random-mode sub-mutation is an insert/delete")
    run.add_argument("--trim", action="store_true", help="trim retained seeds (breaks equal lengths within a family)")
    run.add_argument("--no-wall-clock", action="store_true", help="write wall_ms=0 so reruns are byte-identical")
    run.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS, help="per-execution limit for external targets")
    run.set_defaults(func=cmd_run)

    attr = sub.add_parser(
        "attribute",
        help="exact Shapley attribution of selected positions of one seed",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    attr.add_argument("seed_file")
    attr.add_argument("--target", required=True, help=target_help)
    attr.add_argument("--positions", required=True, help=f"e.g. 0-7 or 1,4,9 (at most {MAX_EXACT_PLAYERS})")
    probe = attr.add_mutually_exclusive_group()
    probe.add_argument("--probe", type=_byte, default=0xFF, help="byte written at every selected position")
    probe.add_argument("--probe-file", default=None, help="file whose byte at each position is that position's probe")
    attr.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
    attr.set_defaults(func=cmd_attribute)

    stats = sub.add_parser("stats", help="summarize a campaign output directory")
    stats.add_argument("out_dir")
    stats.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"byteshap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExecutionError, OSError) as exc:
        print(f"byteshap {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
