import os
import stat
import sys
import textwrap

import pytest
from hypothesis import given
from hypothesis import strategies as st

from byteshap.errors import ExecutionError, TargetTimeout
from byteshap.targets import (
    CC_A,
    CC_A_CLASS,
    CC_B,
    CC_B_HIGH9,
    CC_B_NIB12,
    CC_B_ODD8,
    CC_CRASH,
    CC_DEEP,
    CC_ENTRY,
    CC_FLAGS,
    CC_HEADER,
    CC_TRAILER,
    COUPLED_CHECKER,
    MAGIC,
    MAGIC_CHAIN,
    ExternalTarget,
    Verdict,
    magic_edge,
    resolve_target,
    run_coupled_checker,
    run_external,
    run_magic_chain,
)


def coupled(**fields):
    buf = bytearray(16)
    for pos, value in fields.items():
        buf[int(pos[1:])] = value
    return bytes(buf)


class TestCoupledChecker:
    def test_zero_input_only_base_edges(self):
        r = run_coupled_checker(bytes(16))
        assert r.edges == {CC_ENTRY, CC_HEADER}
        assert r.verdict is Verdict.OK

    def test_short_input_entry_only(self):
        assert run_coupled_checker(bytes(15)).edges == {CC_ENTRY}

    def test_type_one_opens_cluster_a(self):
        r = run_coupled_checker(coupled(b5=0x01))
        assert CC_A in r.edges and CC_B not in r.edges

    def test_type_two_opens_cluster_b(self):
        r = run_coupled_checker(coupled(b5=0x02))
        assert CC_B in r.edges and CC_A not in r.edges

    def test_cluster_a_class_edges(self):
        base = {CC_ENTRY, CC_HEADER, CC_A}
        assert run_coupled_checker(coupled(b5=1, b8=0x40)).edges == base | {CC_A_CLASS[8, 1]}
        assert run_coupled_checker(coupled(b5=1, b8=0xC0)).edges == base | {CC_A_CLASS[8, 3]}
        assert run_coupled_checker(coupled(b5=1, b9=0x02)).edges == base | {CC_A_CLASS[9, 2]}
        assert run_coupled_checker(coupled(b5=1, b12=0x40)).edges == base | {CC_A_CLASS[12, 1]}

    def test_deep_classes_have_no_edge_of_their_own(self):
        # class8 == 2, class9 == 3 and class12 == 3 are exactly what the deep edge wants
        plain = {CC_ENTRY, CC_HEADER, CC_A}
        assert run_coupled_checker(coupled(b5=1, b8=0x80)).edges == plain
        assert run_coupled_checker(coupled(b5=1, b9=0x03)).edges == plain
        assert run_coupled_checker(coupled(b5=1, b12=0xC0)).edges == plain

    def test_cluster_b_reads_same_bytes_differently(self):
        r = run_coupled_checker(coupled(b5=2, b8=0x81, b9=0x80, b12=0x0F))
        assert r.edges == {CC_ENTRY, CC_HEADER, CC_B, CC_B_ODD8, CC_B_HIGH9, CC_B_NIB12}

    def test_deep_class_depends_on_type(self):
        assert CC_DEEP in run_coupled_checker(coupled(b5=1, b8=0x80, b9=0x03, b12=0xC0)).edges
        # same class bytes under type 2 take the other cluster's logic
        assert CC_DEEP not in run_coupled_checker(coupled(b5=2, b8=0x80, b9=0x03, b12=0xC0)).edges
        # class12 == 2 would be right for type 0, not type 1
        assert CC_DEEP not in run_coupled_checker(coupled(b5=1, b8=0x80, b9=0x03, b12=0x80)).edges

    def test_deep_needs_every_condition(self):
        full = dict(b5=1, b8=0x80, b9=0x03, b12=0xC0)
        for drop in full:
            partial = {k: v for k, v in full.items() if k != drop}
            assert CC_DEEP not in run_coupled_checker(coupled(**partial)).edges

    def test_crash(self):
        r = run_coupled_checker(coupled(b5=1, b8=0x80, b9=0x03, b12=0xC0, b15=0x5A))
        assert r.verdict is Verdict.CRASH
        assert {CC_DEEP, CC_CRASH} <= r.edges

    def test_record_must_be_exactly_sixteen_bytes(self):
        deep = coupled(b5=1, b8=0x80, b9=0x03, b12=0xC0)
        assert run_coupled_checker(deep + b"\x00").edges == {CC_ENTRY, CC_HEADER}
        assert CC_FLAGS in run_coupled_checker(coupled(b2=0x80) + bytes(8)).edges

    def test_unrelated_edges(self):
        assert CC_FLAGS in run_coupled_checker(coupled(b2=0x80)).edges
        assert CC_TRAILER in run_coupled_checker(coupled(b14=0x17)).edges

    def test_deep_unreachable_by_single_byte_change_from_zero(self):
        zero = bytes(16)
        for pos in range(16):
            for value in range(1, 256):
                buf = bytearray(zero)
                buf[pos] = value
                assert CC_DEEP not in run_coupled_checker(bytes(buf)).edges

    @given(st.binary(min_size=0, max_size=64))
    def test_pure_and_in_universe(self, data):
        a, b = run_coupled_checker(data), run_coupled_checker(data)
        assert a == b
        assert all(e < COUPLED_CHECKER.edge_universe_size for e in a.edges)


class TestMagicChain:
    def test_wrong_first_byte(self):
        assert run_magic_chain(bytes(8)).edges == {0}

    def test_full_magic(self):
        r = run_magic_chain(MAGIC)
        assert r.edges == {0} | {magic_edge(i) for i in range(8)}

    def test_prefix_of_three(self):
        r = run_magic_chain(MAGIC[:3] + bytes(5))
        assert r.edges == {0, magic_edge(0), magic_edge(1), magic_edge(2)}

    def test_no_trivial_magic_values(self):
        assert not set(MAGIC) & {0x00, 0xFF, 0x7F}

    @given(st.binary(max_size=16))
    def test_pure_and_nested(self, data):
        r = run_magic_chain(data)
        assert r == run_magic_chain(data)
        depth = len(r.edges) - 1
        assert r.edges == {0} | {magic_edge(i) for i in range(depth)}
        assert all(e < MAGIC_CHAIN.edge_universe_size for e in r.edges)


def write_script(path, body):
    path.write_text(f"#!{sys.executable}\n" + textwrap.dedent(body))
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return path


class TestExternal:
    def test_sidecar_edges(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import sys
            open(sys.argv[1] + ".edges", "w").write("1\\n2\\n")
        """)
        r = run_external(f"{stub} @@", b"hello", tmp_path / "work")
        assert r.edges == {1, 2}
        assert r.verdict is Verdict.OK

    def test_edges_depend_on_input(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import sys
            data = open(sys.argv[1], "rb").read()
            open(sys.argv[1] + ".edges", "w").write("\\n".join(str(b) for b in data))
        """)
        target = ExternalTarget(f"{stub} @@", tmp_path / "work")
        assert target(b"\x05\x07").edges == {5, 7}

    def test_abort_is_crash(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import os, sys
            open(sys.argv[1] + ".edges", "w").write("3\\n")
            os.abort()
        """)
        r = run_external(f"{stub} @@", b"x", tmp_path / "work")
        assert r.verdict is Verdict.CRASH
        assert r.edges == {3}

    def test_plain_nonzero_exit_is_not_crash(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import sys
            open(sys.argv[1] + ".edges", "w").write("4\\n")
            sys.exit(3)
        """)
        assert run_external(f"{stub} @@", b"x", tmp_path / "work").verdict is Verdict.OK

    def test_malformed_line_named(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import sys
            open(sys.argv[1] + ".edges", "w").write("1\\nbogus\\n")
        """)
        with pytest.raises(ExecutionError, match=r":2: malformed edge id 'bogus'"):
            run_external(f"{stub} @@", b"x", tmp_path / "work")

    def test_missing_sidecar(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", "pass\n")
        with pytest.raises(ExecutionError, match="no edge file"):
            run_external(f"{stub} @@", b"x", tmp_path / "work")

    def test_timeout(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", "import time; time.sleep(5)\n")
        with pytest.raises(TargetTimeout):
            run_external(f"{stub} @@", b"x", tmp_path / "work", timeout_ms=200)

    def test_requires_placeholder(self, tmp_path):
        with pytest.raises(ValueError, match="@@"):
            run_external("cat", b"x", tmp_path)

    def test_cleans_up_scratch_files(self, tmp_path):
        stub = write_script(tmp_path / "stub.py", """
            import sys
            open(sys.argv[1] + ".edges", "w").write("1\\n")
        """)
        work = tmp_path / "work"
        run_external(f"{stub} @@", b"x", work)
        assert os.listdir(work) == []


def test_resolve_target():
    assert resolve_target("coupled_checker") is run_coupled_checker
    assert isinstance(resolve_target("/bin/true @@"), ExternalTarget)
    with pytest.raises(ValueError, match="unknown target"):
        resolve_target("nope")
