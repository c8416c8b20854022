import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import needs_sqlite
from sqlfuzz.executor.coverage import (
    MAP_SIZE,
    BehavioralOracle,
    FileMap,
    MapUnavailable,
    SharedMapOracle,
    behavior_kind,
    bucketize,
    error_signature,
    is_interesting,
)
from sqlfuzz.executor.crash import dedup_key, frame_functions, hang_key, make_evidence, mask_line
from sqlfuzz.executor.drivers import (
    CLIENT_SERVER_PRELUDE,
    DriverKind,
    SessionDead,
    TargetConfig,
    TargetUnavailable,
    make_driver,
)
from sqlfuzz.executor.outcome import ExecutionOutcome, StatementResult
from sqlfuzz.executor.simulated import CrashRule, SimulatedDriver

# -- coverage map contract -----------------------------------------------------------

CLASSES = [(1, 1), (2, 2), (3, 3), (4, 7), (8, 15), (16, 31), (32, 127), (128, 255)]


def ref_class(count: int) -> int:
    """Index of the hit class of ``count`` (-1 for zero), written independently of the LUT."""
    if count == 0:
        return -1
    for k, (lo, hi) in enumerate(CLASSES):
        if lo <= count <= hi:
            return k
    raise AssertionError(count)


def test_bucketize_matches_reference_for_every_byte():
    counts = np.arange(256, dtype=np.uint8)
    got = bucketize(counts)
    for c in range(256):
        k = ref_class(c)
        assert got[c] == (0 if k < 0 else 1 << k), c


def test_synthetic_maps_exercise_every_class():
    rng = np.random.default_rng(0)
    oracle = SharedMapOracle()
    # map 1: every class at distinct positions
    trace = np.zeros(MAP_SIZE, dtype=np.uint8)
    positions = rng.choice(MAP_SIZE, size=len(CLASSES) * 100, replace=False).reshape(len(CLASSES), 100)
    for k, (lo, hi) in enumerate(CLASSES):
        trace[positions[k]] = rng.integers(lo, hi + 1, size=100)
    assert {ref_class(int(c)) for c in trace[trace > 0]} == set(range(len(CLASSES)))
    assert oracle.delta(trace) == len(CLASSES) * 100
    assert oracle.delta(trace) == 0  # idempotent
    assert oracle.covered == len(CLASSES) * 100
    # map 2: same positions, each moved to the next class -> all new again (except the top class)
    bumped = trace.copy()
    for k in range(len(CLASSES) - 1):
        bumped[positions[k]] = CLASSES[k + 1][0]
    assert oracle.delta(bumped) == (len(CLASSES) - 1) * 100
    assert oracle.delta(bumped) == 0
    # counts inside an already seen class are not new
    within = trace.copy()
    within[positions[3]] = 5  # class 4-7 again
    assert oracle.delta(within) == 0
    with pytest.raises(MapUnavailable):
        oracle.delta(np.zeros(10, dtype=np.uint8))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.uint8, 512), hnp.arrays(np.uint8, 512))
def test_delta_reference_and_idempotence(a, b):
    oracle = SharedMapOracle(map_size=512)
    seen = set()

    def ref(trace):
        new = {(i, ref_class(int(c))) for i, c in enumerate(trace) if c} - seen
        positions = {i for i, _ in new}
        seen.update(new)
        return len(positions)

    for t in (a, b, a):
        assert oracle.delta(t) == ref(t)
    assert oracle.delta(b) == 0


def test_file_map_backing(tmp_path):
    m = FileMap(tmp_path / "cov.map")
    oracle = SharedMapOracle(backing=m)
    m.array[7] = 3
    assert oracle.delta(oracle.read_backing()) == 1
    oracle.clear_backing()
    assert not oracle.read_backing().any()
    with pytest.raises(MapUnavailable):
        SharedMapOracle().read_backing()


# -- behavioural oracle --------------------------------------------------------------

def test_behavioral_pairs_and_signatures():
    assert error_signature(1146, "Table 'x' doesn't exist") == "1146"
    assert error_signature(None, "no such table: t9") == error_signature(None, "no such table: t3")
    assert error_signature(None, "table t1 has 2 columns but 3 values were supplied") == \
        error_signature(None, "table t1 has 4 columns but 1 values were supplied")
    assert behavior_kind("create index i0 on t0(c0)") == "CREATE INDEX"
    assert behavior_kind("CREATE TEMP TABLE x (a)") == "CREATE TEMP TABLE"
    assert behavior_kind("SELECT 1") == "SELECT"
    o = BehavioralOracle()
    ok, err = StatementResult("ok"), StatementResult("error", None, "no such table: t9")
    assert o.delta(["SELECT 1", "SELECT * FROM t9"], [ok, err]) == 2
    assert o.delta(["SELECT 2", "SELECT * FROM t3"], [ok, StatementResult("error", None, "no such table: t3")]) == 0
    assert o.covered == 2


def test_is_interesting():
    assert not is_interesting(ExecutionOutcome())
    assert is_interesting(ExecutionOutcome(coverage_new_edges=1))
    assert not is_interesting(ExecutionOutcome(coverage_new_edges=1), threshold=1)


# -- crash keys ---------------------------------------------------------------------

ASAN = [
    "==1234==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000011",
    "    #0 0x55d0c0a1b2c3 in sqlite3WhereEnd sqlite3.c:167001:5",
    "    #1 0x55d0c0a1b2c4 in sqlite3Select sqlite3.c:150001:7",
    "    #2 0x55d0c0a1b2c5 in sqlite3Parser sqlite3.c:180001:2",
    "    #3 0x55d0c0a1b2c6 in sqlite3RunParser sqlite3.c:181001:9",
    "    #4 0x55d0c0a1b2c7 in sqlite3_prepare_v2 sqlite3.c:139001:3",
    "    #5 0x55d0c0a1b2c8 in main shell.c:100:1",
]


def test_dedup_key_stable_across_aslr_and_pids():
    other = [re.sub(r"0x[0-9a-f]+", "0xdeadbeef", l).replace("1234", "99") for l in ASAN]
    assert dedup_key(ASAN) == dedup_key(other)
    assert frame_functions(ASAN) == ["sqlite3WhereEnd", "sqlite3Select", "sqlite3Parser", "sqlite3RunParser",
                                     "sqlite3_prepare_v2"]
    swapped = ASAN[:1] + [ASAN[2], ASAN[1]] + ASAN[3:]
    assert dedup_key(swapped) != dedup_key(ASAN)
    # frames below the top five do not matter
    assert dedup_key(ASAN[:-1] + ["    #5 0x1 in other x.c:1"]) == dedup_key(ASAN)


def test_tail_key_masks_numbers():
    assert mask_line("==77== boom at 0x7fff1234 line 42") == "==PID== boom at 0x? line N"
    assert dedup_key(["Segfault at 0x10 in step 3"], -11) == dedup_key(["Segfault at 0x99 in step 8"], -11)
    assert dedup_key(["x"], -11) != dedup_key(["x"], -6)
    ev = make_evidence(2, -6, ["a"] * 50 + ASAN)
    assert len(ev.diagnostic_tail) == 30 and ev.trigger_index == 2 and not ev.is_hang
    assert hang_key("SELECT 1 WHERE 'a'") == hang_key("SELECT 2 WHERE 'b'")


# -- simulated driver -----------------------------------------------------------------

def test_simulated_driver_rules():
    d = SimulatedDriver([CrashRule("SETUP", sets="armed", crash=False), CrashRule("BOOM", requires="armed")])
    with d:
        d.reset_environment()
        out = d.execute(["SELECT 'BOOM';"])
        assert out.clean  # not armed
        out = d.execute(["CREATE TABLE t0 (c0); -- SETUP", "SELECT 'BOOM';", "SELECT 2;"])
        assert out.crash is not None and out.crash.trigger_index == 1 and out.executed == 2
        assert not d.alive
        with pytest.raises(SessionDead):
            d.execute(["SELECT 1;"])
        d.reset_environment()  # restarts the dead target
        assert d.alive and d.restarts == 1 and d.session_generation == 1
        assert d.statement_log == []


def test_simulated_once_and_hang():
    d = SimulatedDriver([CrashRule("FLAKY", once=True), CrashRule("SLOW", hang=True)])
    with d:
        assert d.run_case(["SELECT 'FLAKY';"]).crash is not None
        assert d.run_case(["SELECT 'FLAKY';"]).crash is None
        out = d.run_case(["SELECT 'SLOW';"])
        assert out.crash.is_hang and out.per_statement[0].status == "hang"


def test_simulated_preludes_logged():
    d = SimulatedDriver(kind=DriverKind.ClientServer)
    with d:
        d.run_case(["SELECT 1;"])
    assert d.send_log == [CLIENT_SERVER_PRELUDE, "SELECT 1;"]


# -- real targets ---------------------------------------------------------------------

def test_prelude_golden_bytes_client_server():
    drv = make_driver(TargetConfig.emulated_server())
    with drv:
        start = len(drv.wire_log)
        drv.reset_environment()
        wire = bytes(drv.wire_log[start:])
    golden = b"DROP DATABASE IF EXISTS test_db; CREATE DATABASE test_db; USE test_db;\n"
    assert wire.startswith(golden), wire
    assert CLIENT_SERVER_PRELUDE.encode() + b"\n" == golden


@needs_sqlite
def test_prelude_golden_bytes_embedded(sqlite_bin, tmp_path):
    drv = make_driver(TargetConfig.sqlite_shell(sqlite_bin, workdir=str(tmp_path)))
    with drv:
        start = len(drv.wire_log)
        drv.reset_environment()
        wire = bytes(drv.wire_log[start:]).decode()
        commands = [l for l in wire.splitlines() if not l.startswith(".print __SQLFUZZ_")]
        assert commands == [".open tmp.db", ".open test.db"]
        assert drv.send_log[-2:] == [".open tmp.db", ".open test.db"]
        # state does not leak across resets
        assert drv.run_case(["CREATE TABLE t0 (c0 INT);", "INSERT INTO t0 VALUES (1);"]).clean
        out = drv.run_case(["SELECT count(*) FROM t0;"])
        assert out.per_statement[0].message == "no such table: t0"
        assert (tmp_path / "test.db").exists()


@needs_sqlite
def test_embedded_driver_results(sqlite_bin):
    with make_driver(TargetConfig.sqlite_shell(sqlite_bin)) as drv:
        out = drv.run_case(["CREATE TABLE t0 (c0 INT)", "INSERT INTO t0 VALUES (41), (1);", "SELECT sum(c0) FROM t0;",
                            "SELEC 1;", "SELECT 'still alive';", ".shell ls", "SELECT 'unterminated"])
        st = [r.status for r in out.per_statement]
        assert st == ["ok", "ok", "ok", "error", "ok", "error", "error"]
        assert out.per_statement[2].output.strip() == "42"
        assert out.per_statement[3].message == 'near "SELEC": syntax error'
        assert "meta-commands" in out.per_statement[5].message
        assert out.per_statement[6].message == "incomplete input"
        assert drv.statement_log[0] == "CREATE TABLE t0 (c0 INT);"
        oracle = drv.make_oracle()
        assert drv.run_case(["SELECT 1;"], oracle).coverage_new_edges == 1
        assert drv.run_case(["SELECT 2;"], oracle).coverage_new_edges == 0


def test_client_server_crash_dedup_and_restart():
    cfg = TargetConfig.emulated_server("--crash-on", r"HAVING\s+c1\s*\+\s*1")
    with make_driver(cfg) as drv:
        out = drv.run_case(["CREATE TABLE t0 (c0 INT);", "SELECT 1 HAVING c1 + 1;", "SELECT 2;"])
        assert out.crash is not None and out.crash.trigger_index == 1 and out.executed == 2
        assert out.per_statement[1].status == "crash"
        assert any("AddressSanitizer" in l for l in out.crash.diagnostic_tail)
        key = out.crash.dedup_key
        out2 = drv.run_case(["SELECT 5 HAVING c1  +  1;"])  # restarted process, new pid and addresses
        assert out2.crash.dedup_key == key
        assert drv.session_generation >= 1
        clean = drv.run_case(["SELECT 3;"])
        assert clean.clean


def test_client_server_armed_crash_needs_state():
    cfg = TargetConfig.emulated_server("--crash-on", "BOOM", "--arm", "ARMING")
    with make_driver(cfg) as drv:
        assert drv.run_case(["SELECT 'BOOM';"]).crash is None
        drv.reset_environment()
        drv.execute(["SELECT 'ARMING';"])
        assert drv.execute(["SELECT 'BOOM';"]).crash is not None


def test_hang_detection():
    cfg = TargetConfig.emulated_server("--hang-on", "SLEEPY", statement_timeout=1.0)
    with make_driver(cfg) as drv:
        out = drv.run_case(["SELECT 1;", "SELECT 'SLEEPY';"])
        assert out.crash is not None and out.crash.is_hang and out.crash.trigger_index == 1
        assert out.crash.dedup_key == hang_key("SELECT 'SLEEPY';")
        assert drv.run_case(["SELECT 1;"]).clean  # restarted after the kill


def test_client_server_errors_carry_codes():
    with make_driver(TargetConfig.emulated_server()) as drv:
        out = drv.run_case(["SELECT * FROM t9;", "CALL p0();"])
        assert [(r.code, r.message) for r in out.per_statement] == [
            (1146, "Table 'test_db.t9' doesn't exist"), (1305, "PROCEDURE test_db.p0 does not exist")]


def test_target_config_validation():
    with pytest.raises(ValueError):
        TargetConfig(command=[])
    with pytest.raises(ValueError):
        TargetConfig(command=["x"], coverage="edges")
    with pytest.raises(ValueError):
        TargetConfig(command=["x"], statement_timeout=0)
    cfg = TargetConfig.from_mapping({"command": "{python} -m mod", "kind": "client_server"})
    assert cfg.kind is DriverKind.ClientServer and cfg.command[1:] == ["-m", "mod"]
    with pytest.raises(TargetUnavailable):
        make_driver(TargetConfig(command=["/nonexistent/binary"])).start()


def test_shared_map_coverage_with_emulator():
    cfg = TargetConfig.emulated_server(coverage="shared_map")
    drv = make_driver(cfg)
    try:
        with drv:
            oracle = drv.make_oracle()
            assert isinstance(oracle, SharedMapOracle)
            first = drv.run_case(["CREATE TABLE t0 (c0 INT);", "SELECT c0 FROM t0 WHERE c0 > 1;"], oracle)
            assert first.coverage_new_edges > 0
            again = drv.run_case(["CREATE TABLE t0 (c0 INT);", "SELECT c0 FROM t0 WHERE c0 > 1;"], oracle)
            assert again.coverage_new_edges == 0
    finally:
        drv.close()
