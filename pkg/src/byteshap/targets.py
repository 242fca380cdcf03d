"""Deterministic execution oracles.

Two in-process synthetic programs with hand-assigned edge labels, plus a
harness for external commands that report their edges through a sidecar
file. Every target is a callable ``bytes -> ExecutionResult``.

coupled_checker constraint table (0-based positions, type = be16(b[4:6]),
class8 = b[8] >> 6, class9 = b[9] & 3, class12 = b[12] >> 6)::

    edge    condition
    ------  -------------------------------------------------------------
     0      always (entry)
     1      len >= 16 (header parsed); nothing below fires on shorter input
            the type field is only dispatched when len == 16 exactly
            (fixed-size record); longer inputs never reach edges 10 and up
     2      b[2] >= 0x80                          flags byte, no type link
     3      (b[14] & 0x0F) == 0x07                trailer nibble, no type link
    10      type == 0x0001                        cluster A
    11, 12  type == 0x0001 and class8 == 1, 3
    13, 14  type == 0x0001 and class9 == 1, 2
    15, 16  type == 0x0001 and class12 == 1, 2
    20      type == 0x0002                        cluster B
    21      type == 0x0002 and b[8] odd
    22      type == 0x0002 and b[9] >= 0x80
    23      type == 0x0002 and (b[12] & 0x0F) == 0x0F
    30      type == 0x0001 and class8 == 2 and class9 == 3 and class12 == type + 2
    31      edge 30 and b[15] == 0x5A             crash

Both clusters switch on the same type field and read the same three bytes
through different logic (indirect coupling). Edge 30, the deep edge, needs
all three classes at once, and the class it wants from b[12] is computed
from the type value (direct coupling). The classes edge 30 wants are
exactly the ones with no edge of their own, so no retained seed is a
stepping stone toward it.
"""

from __future__ import annotations

import enum
import os
import shlex
import subprocess
import tempfile
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from byteshap.errors import ExecutionError, TargetTimeout


class Verdict(enum.Enum):
    OK = "ok"
    CRASH = "crash"


@dataclass(frozen=True)
class ExecutionResult:
    edges: frozenset[int]
    verdict: Verdict = Verdict.OK

    @property
    def crashed(self) -> bool:
        return self.verdict is Verdict.CRASH


@dataclass(frozen=True)
class TargetSpec:
    name: str
    min_input_len: int
    edge_universe_size: int


Target = Callable[[bytes], ExecutionResult]

# -- coupled_checker -------------------------------------------------------

CC_ENTRY = 0
CC_HEADER = 1
CC_FLAGS = 2
CC_TRAILER = 3
CC_A = 10
# class edges of cluster A, keyed by (position, class)
CC_A_CLASS = {(8, 1): 11, (8, 3): 12, (9, 1): 13, (9, 2): 14, (12, 1): 15, (12, 2): 16}
CC_B = 20
CC_B_ODD8 = 21
CC_B_HIGH9 = 22
CC_B_NIB12 = 23
CC_DEEP = 30
CC_CRASH = 31

TYPE_A = 0x0001
TYPE_B = 0x0002
DEEP_CLASS8 = 2
DEEP_CLASS9 = 3
CRASH_BYTE = 0x5A

COUPLED_CHECKER = TargetSpec("coupled_checker", min_input_len=16, edge_universe_size=32)

_ENTRY_ONLY = ExecutionResult(frozenset({CC_ENTRY}))


def run_coupled_checker(data: bytes) -> ExecutionResult:
    if len(data) < 16:
        return _ENTRY_ONLY
    edges = [CC_ENTRY, CC_HEADER]
    if data[2] >= 0x80:
        edges.append(CC_FLAGS)
    if data[14] & 0x0F == 0x07:
        edges.append(CC_TRAILER)

    kind = (data[4] << 8) | data[5] if len(data) == 16 else 0
    verdict = Verdict.OK
    if kind == TYPE_A:
        class8 = data[8] >> 6
        class9 = data[9] & 3
        class12 = data[12] >> 6
        edges.append(CC_A)
        for key in ((8, class8), (9, class9), (12, class12)):
            if key in CC_A_CLASS:
                edges.append(CC_A_CLASS[key])
        if class8 == DEEP_CLASS8 and class9 == DEEP_CLASS9 and class12 == kind + 2:
            edges.append(CC_DEEP)
            if data[15] == CRASH_BYTE:
                edges.append(CC_CRASH)
                verdict = Verdict.CRASH
    elif kind == TYPE_B:
        edges.append(CC_B)
        if data[8] & 1:
            edges.append(CC_B_ODD8)
        if data[9] >= 0x80:
            edges.append(CC_B_HIGH9)
        if data[12] & 0x0F == 0x0F:
            edges.append(CC_B_NIB12)
    return ExecutionResult(frozenset(edges), verdict)


# -- magic_chain -----------------------------------------------------------

MAGIC = bytes([0x4D, 0xC3, 0x91, 0x2E, 0xB7, 0x58, 0xE4, 0x16])
MC_ENTRY = 0
MAGIC_CHAIN = TargetSpec("magic_chain", min_input_len=8, edge_universe_size=len(MAGIC) + 1)


def magic_edge(i: int) -> int:
    """Edge label emitted when the first ``i + 1`` magic bytes match."""
    return MC_ENTRY + 1 + i


def run_magic_chain(data: bytes) -> ExecutionResult:
    edges = [MC_ENTRY]
    for i, want in enumerate(MAGIC):
        if i >= len(data) or data[i] != want:
            break
        edges.append(magic_edge(i))
    return ExecutionResult(frozenset(edges))


BUILTIN_TARGETS: dict[str, tuple[TargetSpec, Target]] = {
    COUPLED_CHECKER.name: (COUPLED_CHECKER, run_coupled_checker),
    MAGIC_CHAIN.name: (MAGIC_CHAIN, run_magic_chain),
}


# -- external harness ------------------------------------------------------

PLACEHOLDER = "@@"
DEFAULT_TIMEOUT_MS = 1000


def read_edge_file(path: Path) -> frozenset[int]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ExecutionError(f"target wrote no edge file at {path}") from None
    edges = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            value = int(line, 10)
        except ValueError:
            raise ExecutionError(f"{path}:{lineno}: malformed edge id {line!r}") from None
        if not 0 <= value < 2**32:
            raise ExecutionError(f"{path}:{lineno}: edge id {value} outside u32 range")
        edges.add(value)
    return frozenset(edges)


def run_external(
    cmd_template: str,
    data: bytes,
    workdir: str | os.PathLike,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> ExecutionResult:
    """Run ``cmd_template`` with ``@@`` replaced by a file holding ``data``.

    The target must write ``<input>.edges`` next to the input, one decimal
    edge id per line. Death by signal counts as a crash; a plain nonzero exit
    status does not.
    """
    if PLACEHOLDER not in cmd_template:
        raise ValueError(f"command template has no {PLACEHOLDER} placeholder: {cmd_template!r}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    fd, name = tempfile.mkstemp(prefix="input_", suffix=".bin", dir=workdir)
    input_path = Path(name)
    edge_path = Path(name + ".edges")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        argv = [arg.replace(PLACEHOLDER, str(input_path)) for arg in shlex.split(cmd_template)]
        try:
            proc = subprocess.run(
                argv,
                cwd=workdir,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                timeout=timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            raise TargetTimeout(f"target exceeded {timeout_ms} ms: {argv[0]}") from None
        except OSError as exc:
            raise ExecutionError(f"cannot execute {argv[0]}: {exc}") from exc
        edges = read_edge_file(edge_path)
        verdict = Verdict.CRASH if proc.returncode < 0 else Verdict.OK
        return ExecutionResult(edges, verdict)
    finally:
        input_path.unlink(missing_ok=True)
        edge_path.unlink(missing_ok=True)


class ExternalTarget:
    """Callable wrapper binding a command template to a scratch directory."""

    def __init__(self, cmd_template: str, workdir: str | os.PathLike, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        if PLACEHOLDER not in cmd_template:
            raise ValueError(f"command template has no {PLACEHOLDER} placeholder: {cmd_template!r}")
        self.cmd_template = cmd_template
        self.workdir = Path(workdir)
        self.timeout_ms = timeout_ms

    def __call__(self, data: bytes) -> ExecutionResult:
        return run_external(self.cmd_template, data, self.workdir, self.timeout_ms)


def resolve_target(name: str, workdir: str | os.PathLike | None = None, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> Target:
    """Builtin target by name, or an external command if ``name`` contains ``@@``."""
    if PLACEHOLDER in name:
        if workdir is None:
            workdir = tempfile.mkdtemp(prefix="byteshap_")
        return ExternalTarget(name, workdir, timeout_ms)
    try:
        return BUILTIN_TARGETS[name][1]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_TARGETS))
        raise ValueError(f"unknown target {name!r} (builtin: {known}; or a command containing @@)") from None
