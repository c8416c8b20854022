import os
import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

SQLITE_BIN = os.environ.get("SQLFUZZ_SQLITE", shutil.which("sqlite3") or "")
FIXTURES = Path(__file__).parent / "fixtures"

needs_sqlite = pytest.mark.skipif(not SQLITE_BIN, reason="sqlite3 shell not installed (scripts/build_sqlite_shell.sh)")


@pytest.fixture
def sqlite_bin():
    if not SQLITE_BIN:
        pytest.skip("sqlite3 shell not installed")
    return SQLITE_BIN


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# --------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion at the end of the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n = marker.args[0]
    ok = rep.when == "call" and rep.passed
    prev_ok, details = _CRITERIA.get(n, (True, []))
    details = details + [v for k, v in item.user_properties if k == "detail" and v not in details]
    if not ok and rep.skipped:
        details.append(f"skipped: {rep.longrepr[-1] if isinstance(rep.longrepr, tuple) else rep.longrepr}")
    _CRITERIA[n] = (prev_ok and ok, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, details = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
