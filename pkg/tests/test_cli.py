"""The ``sqlfuzz`` command line."""

import json
import sys

import pytest

from sqlfuzz.cli import main
from sqlfuzz.reduction import RESET_MARKER, load_poc


def _emulator_target(path, *flags):
    cmd = ["{python}", "-m", "sqlfuzz.executor.sqlshell", "--batch", "--force", "--unbuffered", *flags]
    path.write_text(json.dumps({"command": cmd, "kind": "client_server"}))
    return path


def test_expand_prints_templates(capsys):
    assert main(["expand", "--grammar", "sqlite", "--start", "alterTableStmt", "-n", "5", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(l.startswith("ALTER TABLE [tableName]") for l in lines)


def test_expand_reports_bad_rule(capsys):
    assert main(["expand", "--grammar", "sqlite", "--start", "noSuchRule"]) == 2
    assert "noSuchRule" in capsys.readouterr().err


def test_bad_seed_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fuzz", "--config", "x.toml", "--seed", "-3"])
    assert exc.value.code == 2


def test_missing_config_reports_error(tmp_path, capsys):
    assert main(["fuzz", "--config", str(tmp_path / "none.toml")]) == 2
    assert "error" in capsys.readouterr().err


def test_fuzz_against_emulator_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('dialect = "mysql_subset"\n[target]\ncommand = ["{python}", "-m", "sqlfuzz.executor.sqlshell",'
                   ' "--batch", "--force", "--unbuffered"]\nkind = "client_server"\n')
    out = tmp_path / "run"
    assert main(["fuzz", "--config", str(cfg), "--max-cases", "8", "--budget", "2m", "--seed", "0x10",
                 "--mock", "rules", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "cases executed      8" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cases_executed"] == 8
    start = json.loads((out / "stats.ndjson").read_text().splitlines()[0])
    assert start["seed"] == 16 and start["dialect"] == "mysql_subset"


def test_reduce_then_replay_state_dependent_crash(tmp_path, capsys):
    target = _emulator_target(tmp_path / "target.json", "--crash-on", "zeroblob", "--arm", "armed_flag")
    case = tmp_path / "case.sql"
    case.write_text("CREATE TABLE armed_flag (c0 INT);\nSELECT 5;\n" + RESET_MARKER + "\n"
                    "CREATE TABLE t1 (c0 INT);\nSELECT c0, zeroblob(3) FROM t1 WHERE c0 > 1;\n")
    out = tmp_path / "red"
    assert main(["reduce", "--case", str(case), "--target", str(target), "--out", str(out)]) == 0
    items, meta = load_poc(out)
    assert meta["crash_class"] == "StateDependent" and meta["reproduced"] and meta["one_minimal"]
    assert items[0] == (0, "CREATE TABLE armed_flag (c0 INT);")
    assert len(items) == 2 and "zeroblob" in items[1][1] and items[1][0] == 1
    capsys.readouterr()
    assert main(["replay", "--poc", str(out), "--target", str(target)]) == 0
    assert "reproduced crash " + meta["dedup_key"] in capsys.readouterr().out


def test_replay_without_crash_exits_1(tmp_path, capsys):
    target = _emulator_target(tmp_path / "target.json")
    poc = tmp_path / "poc"
    poc.mkdir()
    (poc / "poc.sql").write_text("SELECT 1;\n")
    assert main(["replay", "--poc", str(poc), "--target", str(target)]) == 1
    assert "not reproduced" in capsys.readouterr().out


def test_replay_needs_a_target(tmp_path, capsys):
    poc = tmp_path / "poc"
    poc.mkdir()
    (poc / "poc.sql").write_text("SELECT 1;\n")
    assert main(["replay", "--poc", str(poc)]) == 2


def test_console_script_entry_point():
    import subprocess

    r = subprocess.run([sys.executable, "-m", "sqlfuzz.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("fuzz", "replay", "reduce", "expand"):
        assert sub in r.stdout
