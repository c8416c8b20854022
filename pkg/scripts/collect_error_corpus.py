#!/usr/bin/env python3
"""Regenerate the labelled error-message corpus used by the classifier tests.

Each entry is (setup statements, failing statement, hand-assigned category).
The statements are run against the real targets -- the sqlite3 shell for
SQLite and the bundled emulator for the MySQL subset -- and the diagnostic
the driver reports is written next to the label:

    python scripts/collect_error_corpus.py [--sqlite /path/to/sqlite3]

Output: tests/fixtures/errors/<dialect>.jsonl
"""

from __future__ import annotations

import argparse
import json
import shutil
from pathlib import Path

from sqlfuzz.executor.drivers import TargetConfig, make_driver

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "errors"

T0 = ["CREATE TABLE t0 (c0 INT PRIMARY KEY, c1 TEXT NOT NULL, c2 INT CHECK (c2 > 0));", "INSERT INTO t0 VALUES (1, 'a', 1);"]
T1 = ["CREATE TABLE t1 (c0 INT, c1 TEXT);"]

SQLITE = [
    # Syntax
    ([], "SELEC 1;", "Syntax"),
    ([], "SELECT * FROM WHERE;", "Syntax"),
    ([], "CREATE TABLE (c0 INT);", "Syntax"),
    ([], "SELECT 1 +;", "Syntax"),
    ([], "SELECT #1;", "Syntax"),
    ([], "CALL p0();", "Syntax"),
    # DuplicateDefinition
    (T0, "CREATE TABLE t0 (c0 INT);", "DuplicateDefinition"),
    ([], "CREATE TABLE t5 (c0 INT, c0 TEXT);", "DuplicateDefinition"),
    (T0, "CREATE INDEX i0 ON t0(c0); CREATE INDEX i0 ON t0(c1);", "DuplicateDefinition"),
    (T0, "CREATE VIEW v0 AS SELECT 1; CREATE VIEW v0 AS SELECT 2;", "DuplicateDefinition"),
    (T0, "ALTER TABLE t0 ADD COLUMN c1 INT;", "DuplicateDefinition"),
    # UnsupportedFeature
    (T0, "ALTER TABLE t0 ADD COLUMN c9 INT PRIMARY KEY;", "UnsupportedFeature"),
    (T0, "ALTER TABLE t0 ADD COLUMN c9 INT UNIQUE;", "UnsupportedFeature"),
    # PluginComponent
    ([], "CREATE VIRTUAL TABLE t7 USING nosuchmodule(c0);", "PluginComponent"),
    ([], "CREATE VIRTUAL TABLE t7 USING fancy_index(c0, c1);", "PluginComponent"),
    # Formattable
    (T1, "INSERT INTO t1 VALUES (1, 'a', 2);", "Formattable"),
    (T1, "INSERT INTO t1(c0) VALUES (1, 2);", "Formattable"),
    (["CREATE TABLE t3 (c0 INT) STRICT;"], "INSERT INTO t3 VALUES ('abc');", "Formattable"),
    # InvalidObjectReference
    ([], "SELECT * FROM t9;", "InvalidObjectReference"),
    ([], "INSERT INTO t4 VALUES (1);", "InvalidObjectReference"),
    (T0, "SELECT c7 FROM t0;", "InvalidObjectReference"),
    (T0, "SELECT nosuchfn(c0) FROM t0;", "InvalidObjectReference"),
    ([], "DROP VIEW v3;", "InvalidObjectReference"),
    ([], "DROP INDEX i4;", "InvalidObjectReference"),
    ([], "RELEASE SAVEPOINT s0;", "InvalidObjectReference"),
    (T0, "SELECT c0 FROM t0 ORDER BY c0 COLLATE nocoll;", "InvalidObjectReference"),
    # PreconditionsMissing
    ([], "COMMIT;", "PreconditionsMissing"),
    ([], "ROLLBACK;", "PreconditionsMissing"),
    (["BEGIN;"], "BEGIN;", "PreconditionsMissing"),
    (["BEGIN;"], "VACUUM;", "PreconditionsMissing"),
    ([], "CREATE TABLE t6 (c0 INT) WITHOUT ROWID;", "PreconditionsMissing"),
    (T0, "CREATE TRIGGER r0 INSTEAD OF INSERT ON t0 BEGIN SELECT 1; END;", "PreconditionsMissing"),
    # IncorrectFeatureUsage
    (T0, "SELECT c0 FROM t0 WHERE count(*) > 1;", "IncorrectFeatureUsage"),
    (T0, "SELECT abs(1, 2);", "IncorrectFeatureUsage"),
    (T0, "SELECT c0 FROM t0 ORDER BY 5;", "IncorrectFeatureUsage"),
    (T0, "SELECT 1 UNION SELECT 1, 2;", "IncorrectFeatureUsage"),
    (T0, "SELECT c0 FROM t0 WHERE c0 IN (SELECT c0, c1 FROM t0);", "IncorrectFeatureUsage"),
    (T0, "SELECT (1, 2) + 1;", "IncorrectFeatureUsage"),
    ([], "SELECT *;", "IncorrectFeatureUsage"),
    # ViolateConstraints
    (T0, "INSERT INTO t0 VALUES (1, 'b', 1);", "ViolateConstraints"),
    (T0, "INSERT INTO t0 VALUES (2, NULL, 1);", "ViolateConstraints"),
    (T0, "INSERT INTO t0 VALUES (3, 'c', -1);", "ViolateConstraints"),
    (T0 + T1, "SELECT c0 FROM t0, t1;", "ViolateConstraints"),
    ([], "SELECT 9223372036854775807 + 1 FROM (SELECT 1) WHERE abs(-9223372036854775808);", "ViolateConstraints"),
]

_MY0 = ["CREATE TABLE t0 (c0 INT PRIMARY KEY, c1 VARCHAR(3) NOT NULL, c2 INT CHECK (c2 > 0));",
        "INSERT INTO t0 VALUES (1, 'a', 1);"]
_MYG = ["CREATE TABLE t2 (c0 INT, c1 GEOMETRY);"]

MYSQL = [
    ([], "SELEC 1;", "Syntax"),
    ([], "SELECT * FROM WHERE;", "Syntax"),
    (_MY0, "CREATE TABLE t0 (c0 INT);", "DuplicateDefinition"),
    ([], "CREATE TABLE t5 (c0 INT, c0 INT);", "DuplicateDefinition"),
    (["CREATE PROCEDURE p0() BEGIN SELECT 1; END;"], "CREATE PROCEDURE p0() BEGIN SELECT 2; END;", "DuplicateDefinition"),
    ([], "CREATE DATABASE test_db;", "DuplicateDefinition"),
    ([], "INSTALL COMPONENT 'file://component_nope';", "PluginComponent"),
    ([], "UNINSTALL COMPONENT 'file://component_validate_password';", "PluginComponent"),
    ([], "CREATE TABLE t8 (c0 INT) ENGINE=NoSuchEngine;", "PluginComponent"),
    ([], "SET GLOBAL max_connections = 'lots';", "InappropriateSetting"),
    ([], "SET autocommit = 7;", "InappropriateSetting"),
    ([], "SET nosuch_variable = 1;", "InappropriateSetting"),
    (_MYG, "INSERT INTO t2 VALUES (1, 'POINT(1 1)');", "Formattable"),
    (_MY0, "INSERT INTO t0 VALUES (2, 'b');", "Formattable"),
    ([], "SELECT * FROM t9;", "InvalidObjectReference"),
    ([], "CALL p7();", "InvalidObjectReference"),
    (_MY0, "SELECT c9 FROM t0;", "InvalidObjectReference"),
    ([], "USE nosuch_db;", "InvalidObjectReference"),
    (_MY0, "SELECT nosuchfn(c0) FROM t0;", "InvalidObjectReference"),
    (_MY0, "INSERT INTO t0 VALUES (1, 'x', 1);", "ViolateConstraints"),
    (_MY0, "INSERT INTO t0 VALUES (2, NULL, 1);", "ViolateConstraints"),
    (_MY0, "INSERT INTO t0 VALUES (3, 'c', -5);", "ViolateConstraints"),
    (_MY0 + ["CREATE TABLE t1 (c0 INT);"], "SELECT c0 FROM t0, t1;", "ViolateConstraints"),
]


def collect(driver, entries, dialect):
    rows = []
    with driver:
        for setup, stmt, label in entries:
            driver.reset_environment()
            pre = driver.execute(setup)
            assert pre.clean, (setup, pre.per_statement)
            out = driver.execute([stmt])
            errs = out.errors
            if not errs:
                raise SystemExit(f"{dialect}: statement did not fail: {stmt}")
            _, res = errs[-1]
            rows.append({"dialect": dialect, "label": label, "code": res.code, "message": res.message,
                         "setup": setup, "statement": stmt})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sqlite", default=shutil.which("sqlite3") or "sqlite3")
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    for dialect, cfg, entries in (
        ("sqlite", TargetConfig.sqlite_shell(args.sqlite), SQLITE),
        ("mysql_subset", TargetConfig.emulated_server(), MYSQL),
    ):
        rows = collect(make_driver(cfg), entries, dialect)
        with open(OUT / f"{dialect}.jsonl", "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
        print(f"{dialect}: {len(rows)} messages")


if __name__ == "__main__":
    main()
