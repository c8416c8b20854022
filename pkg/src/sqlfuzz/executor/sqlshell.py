"""A MySQL-flavoured interactive client emulated on top of SQLite.

No MySQL server is available offline, so client-server code paths (the
``DROP DATABASE``/``CREATE DATABASE``/``USE`` prelude, numbered ``ERROR nnnn``
diagnostics, stored procedures, GEOMETRY columns, system variables, server
components) are exercised against this process instead. It reads statements
from stdin exactly like ``mysql --batch --force --unbuffered`` would, prints
result rows tab-separated on stdout and errors as::

    ERROR 1146 (42S02) at line 3: Table 'test_db.t9' doesn't exist

on stderr, flushing after every statement.

Fault injection for driver and reduction tests:

``--crash-on REGEX``   abort with a sanitizer-style report when a statement
                       matching REGEX is executed;
``--arm REGEX``        only crash after some statement matching REGEX has
                       executed in this process (state survives database
                       resets but not restarts -- a state-dependent crash);
``--hang-on REGEX``    stop responding when a matching statement arrives.

When a coverage map is exported through the environment, every statement
folds hashes of its SQLite bytecode opcode pairs into it, giving the
shared-map oracle a real (if coarse) signal.

Run as ``python -m sqlfuzz.executor.sqlshell``.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import re
import sqlite3
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .. import sqltext

DEFAULT_DB = None

# settings: name -> (min, max) for numeric, None for free-form strings
_SETTINGS: Dict[str, Optional[Tuple[int, int]]] = {
    "max_connections": (1, 100000),
    "sort_buffer_size": (32768, 4294967295),
    "max_heap_table_size": (16384, 4294966272),
    "innodb_lock_wait_timeout": (1, 1073741824),
    "tmp_table_size": (1024, 4294967295),
    "sql_mode": None,
    "autocommit": (0, 1),
    "unique_checks": (0, 1),
    "foreign_key_checks": (0, 1),
    "gtid_next": None,
    "gtid_purged": None,
    "histogram_generation_max_mem_size": (1000000, 4294967295),
}
_ENGINES = {"innodb", "myisam", "memory", "csv", "archive", "blackhole", "heap"}
_COMPONENTS = {"file://component_validate_password", "file://component_log_sink_json"}
_GEOMETRY_TYPES = {
    "GEOMETRY", "POINT", "LINESTRING", "POLYGON", "MULTIPOINT",
    "MULTILINESTRING", "MULTIPOLYGON", "GEOMETRYCOLLECTION",
}
_WKT_RE = re.compile(
    r"^\s*(POINT|LINESTRING|POLYGON|MULTIPOINT|MULTILINESTRING|MULTIPOLYGON|GEOMETRYCOLLECTION)"
    r"\s*\(.*\)\s*$",
    re.IGNORECASE | re.DOTALL,
)
_GEOM_TAG = b"GEOM:"
_NOOP_HEADS = {"FLUSH", "RESET", "KILL", "OPTIMIZE", "REPAIR", "CHECKSUM", "PURGE", "LOCK", "UNLOCK",
               "START", "STOP", "XA", "HANDLER", "CACHE", "GRANT", "REVOKE"}


class ServerError(Exception):
    def __init__(self, code: int, state: str, message: str):
        super().__init__(message)
        self.code, self.state, self.message = code, state, message


def _syntax(near: str = "") -> ServerError:
    return ServerError(
        1064,
        "42000",
        "You have an error in your SQL syntax; check the manual that corresponds to your "
        f"MySQL server version for the right syntax to use near '{near[:40]}' at line 1",
    )


# --------------------------------------------------------------------------
# SQLite <-> MySQL translation

def _geom_from_text(wkt, *_):
    if wkt is None:
        return None
    if not isinstance(wkt, str) or not _WKT_RE.match(wkt):
        raise ValueError("invalid WKT")
    return _GEOM_TAG + wkt.strip().upper().encode()


def _geom_ok(value) -> int:
    return int(value is None or (isinstance(value, bytes) and value.startswith(_GEOM_TAG)))


def _as_text(value):
    if value is None:
        return None
    if isinstance(value, bytes) and value.startswith(_GEOM_TAG):
        return value[len(_GEOM_TAG):].decode()
    return value


def _concat(*args):
    if any(a is None for a in args):
        return None
    return "".join(str(a) for a in args)


def _new_connection() -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:", isolation_level=None, check_same_thread=False)
    conn.create_function("ST_GeomFromText", -1, _geom_from_text, deterministic=True)
    conn.create_function("ST_AsText", 1, _as_text, deterministic=True)
    conn.create_function("__geom_ok", 1, _geom_ok, deterministic=True)
    conn.create_function("CONCAT", -1, _concat, deterministic=True)
    conn.create_function("NOW", 0, lambda: "2024-01-01 00:00:00")
    return conn


def _map_sqlite_error(msg: str, db: str) -> ServerError:
    m = re.match(r"no such table: (?:\w+\.)?(\w+)", msg)
    if m:
        return ServerError(1146, "42S02", f"Table '{db}.{m.group(1)}' doesn't exist")
    m = re.match(r"(?:table|view) (\S+) already exists", msg)
    if m:
        return ServerError(1050, "42S01", f"Table '{m.group(1)}' already exists")
    m = re.match(r"no such column: (\S+)", msg)
    if m:
        return ServerError(1054, "42S22", f"Unknown column '{m.group(1)}' in 'field list'")
    m = re.match(r"ambiguous column name: (?:main\.)?(\S+)", msg)
    if m:
        return ServerError(1052, "23000", f"Column '{m.group(1)}' in field list is ambiguous")
    m = re.match(r'near "(.*)": syntax error', msg)
    if m:
        return _syntax(m.group(1))
    if msg.startswith(("incomplete input", "unrecognized token")):
        return _syntax()
    m = re.match(r"UNIQUE constraint failed: (\S+)", msg)
    if m:
        return ServerError(1062, "23000", f"Duplicate entry for key '{m.group(1)}'")
    m = re.match(r"NOT NULL constraint failed: \w+\.(\w+)", msg)
    if m:
        return ServerError(1048, "23000", f"Column '{m.group(1)}' cannot be null")
    if msg.startswith("CHECK constraint failed: geom_"):
        return ServerError(1416, "22003", "Cannot get geometry object from data you send to the GEOMETRY field")
    m = re.match(r"CHECK constraint failed: (\S+)", msg)
    if m:
        return ServerError(3819, "HY000", f"Check constraint '{m.group(1)}' is violated.")
    if re.search(r"\d+ values for \d+ columns|has \d+ columns but \d+ values were supplied", msg):
        return ServerError(1136, "21S01", "Column count doesn't match value count at row 1")
    m = re.match(r"no such function: (\w+)", msg)
    if m:
        return ServerError(1305, "42000", f"FUNCTION {db}.{m.group(1)} does not exist")
    m = re.match(r"duplicate column name: (\w+)", msg)
    if m:
        return ServerError(1060, "42S21", f"Duplicate column name '{m.group(1)}'")
    if "user-defined function raised exception" in msg:
        return ServerError(3037, "22023", "Invalid GIS data provided to function st_geomfromtext.")
    return ServerError(1105, "HY000", msg)


_COLUMN_STOP = {"PRIMARY", "UNIQUE", "KEY", "INDEX", "CONSTRAINT", "FOREIGN", "CHECK", "FULLTEXT", "SPATIAL"}
_STRIP_WORDS = {"UNSIGNED", "ZEROFILL", "AUTO_INCREMENT", "SIGNED"}


def translate_create_table(text: str) -> str:
    """Rewrite a MySQL CREATE TABLE into SQLite, validating the storage engine."""
    toks = sqltext.tokenize(text)
    out: List[str] = []
    depth = 0
    i = 0
    at_item_start = False
    skip_item = False
    pending_check: Optional[str] = None
    closed = False
    tail_words: List[str] = []
    while i < len(toks):
        t = toks[i]
        if closed:
            if t.significant and t.text != ";":
                tail_words.append(t.text)
            i += 1
            continue
        if t.text == "(":
            depth += 1
            if depth == 1:
                out.append("(")
                at_item_start = True
                i += 1
                continue
        elif t.text == ")":
            if depth == 1:
                if pending_check:
                    out.append(pending_check)
                    pending_check = None
                out.append(")")
                closed = True
                depth = 0
                i += 1
                continue
            depth -= 1
        elif t.text == "," and depth == 1:
            if pending_check:
                out.append(pending_check)
                pending_check = None
            if not skip_item:
                out.append(",")
            skip_item = False
            at_item_start = True
            i += 1
            continue
        if depth >= 1 and at_item_start and t.significant:
            at_item_start = False
            if t.upper in ("KEY", "INDEX", "FULLTEXT", "SPATIAL"):
                skip_item = True
                while out and not out[-1].strip():
                    out.pop()
                if out and out[-1] == ",":
                    out.pop()
        if skip_item:
            i += 1
            continue
        if depth == 1 and t.kind == sqltext.WORD and t.upper in _STRIP_WORDS:
            i += 1
            continue
        if depth == 1 and t.kind == sqltext.WORD and _is_type_position(toks, i):
            col = _prev_word(toks, i)
            u = t.upper
            if u in _GEOMETRY_TYPES:
                out.append("BLOB")
                pending_check = f" CONSTRAINT geom_{col} CHECK(__geom_ok({col}))"
                i += 1
                continue
            if u in ("ENUM", "SET", "JSON"):
                out.append("TEXT")
                i += 1
                if u != "JSON":
                    i = _skip_group(toks, i)
                continue
        out.append(t.text)
        i += 1
    _check_options(tail_words)
    return "".join(out).rstrip() + ";"


def _prev_word(toks, i) -> str:
    j = i - 1
    while j >= 0 and not toks[j].significant:
        j -= 1
    return toks[j].text.strip("`\"")


def _is_type_position(toks, i) -> bool:
    """True when toks[i] directly follows a column name that starts a definition."""
    j = i - 1
    while j >= 0 and not toks[j].significant:
        j -= 1
    if j < 0 or toks[j].kind not in (sqltext.WORD, sqltext.QUOTED):
        return False
    if toks[j].upper in _COLUMN_STOP:
        return False
    k = j - 1
    while k >= 0 and not toks[k].significant:
        k -= 1
    return k >= 0 and toks[k].text in ("(", ",")


def _skip_group(toks, i) -> int:
    while i < len(toks) and not toks[i].significant:
        i += 1
    if i < len(toks) and toks[i].text == "(":
        depth = 0
        while i < len(toks):
            if toks[i].text == "(":
                depth += 1
            elif toks[i].text == ")":
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
    return i


def _check_options(words: List[str]) -> None:
    for k, w in enumerate(words):
        if w.upper() == "ENGINE":
            rest = [x for x in words[k + 1 :] if x != "="]
            if rest and rest[0].strip("`'\"").lower() not in _ENGINES:
                raise ServerError(1286, "42000", f"Unknown storage engine '{rest[0].strip('`')}'")


# --------------------------------------------------------------------------
# the emulated server session

@dataclass
class Session:
    databases: Dict[str, sqlite3.Connection] = field(default_factory=dict)
    procedures: Dict[Tuple[str, str], str] = field(default_factory=dict)
    components: set = field(default_factory=set)
    current: Optional[str] = None
    variables: Dict[str, str] = field(default_factory=dict)

    # -- dispatch --------------------------------------------------------
    def execute(self, text: str) -> List[tuple]:
        words = sqltext.leading_words(text, 4)
        if not words:
            return []
        head = words[0]
        if head == "CREATE" and "DATABASE" in words[1:2] + words[1:3]:
            return self._create_database(text)
        if head == "DROP" and len(words) > 1 and words[1] in ("DATABASE", "SCHEMA"):
            return self._drop_database(text)
        if head == "USE":
            name = self._name_after(text, "USE")
            if name not in self.databases:
                raise ServerError(1049, "42000", f"Unknown database '{name}'")
            self.current = name
            return []
        if head == "SET":
            return self._set(text)
        if head in ("INSTALL", "UNINSTALL") and len(words) > 1 and words[1] == "COMPONENT":
            return self._component(text, install=head == "INSTALL")
        if head == "SELECT" and self.current is None and not re.search(r"\bFROM\b", text, re.I):
            return self._sqlite_run(self._scratch(), text)
        conn = self._conn()
        if head == "CREATE" and "PROCEDURE" in words[1:3]:
            return self._create_procedure(text)
        if head == "DROP" and len(words) > 1 and words[1] == "PROCEDURE":
            return self._drop_procedure(text)
        if head == "CALL":
            return self._call(text)
        if head == "CREATE" and "TABLE" in words[1:3]:
            return self._sqlite_run(conn, translate_create_table(text))
        if head in ("ANALYZE", "CHECK") and len(words) > 1 and words[1] == "TABLE":
            return self._analyze(conn, text)
        if head == "SHOW":
            return self._show(conn, words)
        if head in _NOOP_HEADS:
            return []
        return self._sqlite_run(conn, text)

    # -- helpers -----------------------------------------------------------
    def _scratch(self) -> sqlite3.Connection:
        if "__scratch" not in self.__dict__:
            self.__dict__["__scratch"] = _new_connection()
        return self.__dict__["__scratch"]

    def _conn(self) -> sqlite3.Connection:
        if self.current is None:
            raise ServerError(1046, "3D000", "No database selected")
        return self.databases[self.current]

    @staticmethod
    def _name_after(text: str, keyword_re: str) -> str:
        m = re.search(keyword_re + r"\s+(?:IF\s+(?:NOT\s+)?EXISTS\s+)?[`\"]?(\w+)", text, re.I)
        if not m:
            raise _syntax(text)
        return m.group(1)

    def _sqlite_run(self, conn: sqlite3.Connection, text: str) -> List[tuple]:
        try:
            cur = conn.execute(text)
            return [tuple(_as_text(v) for v in row) for row in cur.fetchall()]
        except sqlite3.Warning:
            raise _syntax(text)
        except sqlite3.Error as exc:
            raise _map_sqlite_error(str(exc), self.current or "") from None

    def _create_database(self, text: str) -> List[tuple]:
        name = self._name_after(text, r"(?:DATABASE|SCHEMA)")
        if name in self.databases:
            if re.search(r"IF\s+NOT\s+EXISTS", text, re.I):
                return []
            raise ServerError(1007, "HY000", f"Can't create database '{name}'; database exists")
        self.databases[name] = _new_connection()
        return []

    def _drop_database(self, text: str) -> List[tuple]:
        name = self._name_after(text, r"(?:DATABASE|SCHEMA)")
        if name not in self.databases:
            if re.search(r"IF\s+EXISTS", text, re.I):
                return []
            raise ServerError(1008, "HY000", f"Can't drop database '{name}'; database doesn't exist")
        self.databases.pop(name).close()
        self.procedures = {k: v for k, v in self.procedures.items() if k[0] != name}
        if self.current == name:
            self.current = None
        return []

    def _set(self, text: str) -> List[tuple]:
        m = re.match(
            r"\s*SET\s+(?:(GLOBAL|SESSION|PERSIST|LOCAL)\s+|@@(?:(global|session)\.)?)?(@?\w+)\s*(?:=|:=)\s*(.+?);?\s*$",
            text,
            re.I | re.S,
        )
        if not m:
            raise _syntax(text)
        name, value = m.group(3), m.group(4).strip()
        if name.startswith("@"):
            self.variables[name] = value
            return []
        key = name.lower()
        if key not in _SETTINGS:
            raise ServerError(1193, "HY000", f"Unknown system variable '{name}'")
        bounds = _SETTINGS[key]
        if bounds is not None and value.upper() != "DEFAULT":
            try:
                num = int(value.strip("'\""))
            except ValueError:
                raise ServerError(1232, "42000", f"Incorrect argument type to variable '{name}'") from None
            if not bounds[0] <= num <= bounds[1]:
                raise ServerError(1231, "42000", f"Variable '{name}' can't be set to the value of '{value}'")
        self.variables[key] = value
        return []

    def _component(self, text: str, install: bool) -> List[tuple]:
        urns = re.findall(r"'([^']*)'", text)
        if not urns:
            raise _syntax(text)
        for urn in urns:
            if install:
                if urn not in _COMPONENTS:
                    raise ServerError(3529, "HY000", f"Cannot load component from specified URN: '{urn}'.")
                if urn in self.components:
                    raise ServerError(3531, "HY000", f"Cannot load component from specified URN: '{urn}'.")
            elif urn not in self.components:
                raise ServerError(3537, "HY000", f"Component specified by URN '{urn}' to unload has not been loaded.")
        for urn in urns:
            (self.components.add if install else self.components.discard)(urn)
        return []

    def _create_procedure(self, text: str) -> List[tuple]:
        m = re.match(r"\s*CREATE\s+(?:DEFINER\s*=\s*\S+\s+)?PROCEDURE\s+[`\"]?(\w+)[`\"]?\s*\((.*?)\)\s*(.*)$", text, re.I | re.S)
        if not m:
            raise _syntax(text)
        name, body = m.group(1), m.group(3).strip().rstrip(";").strip()
        key = (self.current, name.lower())
        if key in self.procedures:
            raise ServerError(1304, "42000", f"PROCEDURE {name} already exists")
        bm = re.match(r"BEGIN\b(.*)\bEND$", body, re.I | re.S)
        inner = bm.group(1) if bm else body
        self.procedures[key] = inner
        return []

    def _drop_procedure(self, text: str) -> List[tuple]:
        name = self._name_after(text, "PROCEDURE")
        key = (self.current, name.lower())
        if key not in self.procedures:
            if re.search(r"IF\s+EXISTS", text, re.I):
                return []
            raise ServerError(1305, "42000", f"PROCEDURE {self.current}.{name} does not exist")
        del self.procedures[key]
        return []

    def _call(self, text: str) -> List[tuple]:
        name = self._name_after(text, "CALL")
        key = (self.current, name.lower())
        if key not in self.procedures:
            raise ServerError(1305, "42000", f"PROCEDURE {self.current}.{name} does not exist")
        rows: List[tuple] = []
        for stmt in sqltext.split_statements(self.procedures[key]):
            rows = self.execute(stmt)
        return rows

    def _analyze(self, conn, text: str) -> List[tuple]:
        name = self._name_after(text, "TABLE")
        if not conn.execute("SELECT 1 FROM sqlite_master WHERE name = ?", (name,)).fetchone():
            raise ServerError(1146, "42S02", f"Table '{self.current}.{name}' doesn't exist")
        if sqltext.leading_words(text, 1) == ["ANALYZE"]:
            conn.execute("ANALYZE")
        return [(f"{self.current}.{name}", "analyze", "status", "OK")]

    def _show(self, conn, words) -> List[tuple]:
        if len(words) > 1 and words[1] == "TABLES":
            return [r for r in conn.execute("SELECT name FROM sqlite_master WHERE type IN ('table','view') ORDER BY name")]
        if len(words) > 1 and words[1] == "DATABASES":
            return [(n,) for n in sorted(self.databases)]
        return []


# --------------------------------------------------------------------------
# fault injection and the read-eval-print loop

@dataclass
class Faults:
    crash_on: List[re.Pattern] = field(default_factory=list)
    arm: Optional[re.Pattern] = None
    hang_on: List[re.Pattern] = field(default_factory=list)
    armed: bool = False

    def before(self, text: str) -> None:
        for pat in self.hang_on:
            if pat.search(text):
                time.sleep(3600)
        for pat in self.crash_on:
            if pat.search(text) and (self.arm is None or self.armed):
                crash(pat.pattern)

    def after(self, text: str) -> None:
        if self.arm is not None and self.arm.search(text):
            self.armed = True


def crash(pattern: str) -> None:
    """Print a sanitizer-style report whose frames depend only on ``pattern``, then abort."""
    digest = hashlib.sha1(pattern.encode()).hexdigest()
    pid = os.getpid()
    base = 0x550000000000 + (pid << 12)
    lines = [
        f"=={pid}==ERROR: AddressSanitizer: SEGV on unknown address 0x{(pid * 8) & 0xffff:016x} "
        f"(pc 0x{base + 0x1f3a:x} bp 0x7ffc{pid:08x} sp 0x7ffc{pid + 16:08x} T0)",
        f"=={pid}==The signal is caused by a READ memory access.",
    ]
    frames = [f"emu_{digest[k * 6:(k + 1) * 6]}" for k in range(4)] + ["sqlite3VdbeExec", "main"]
    for k, fn in enumerate(frames):
        lines.append(f"    #{k} 0x{base + 0x1000 * (k + 1) + pid % 97:x} in {fn} sqlshell.c:{100 + 17 * k}:{k + 3}")
    lines.append(f"SUMMARY: AddressSanitizer: SEGV sqlshell.c:100:3 in {frames[0]}")
    lines.append(f"=={pid}==ABORTING")
    sys.stdout.flush()
    sys.stderr.write("\n".join(lines) + "\n")
    sys.stderr.flush()
    os.abort()


class Coverage:
    """Fold EXPLAIN opcode-pair hashes into an exported map, if any."""

    def __init__(self):
        self.map = None
        if os.environ.get("__AFL_SHM_ID") or os.environ.get("SQLFUZZ_MAP_FILE"):
            try:
                from .coverage import attach_map

                self.map = attach_map()
            except Exception:  # pragma: no cover - coverage is best effort
                self.map = None

    def record(self, session: Session, text: str) -> None:
        if self.map is None:
            return
        conn = session.databases.get(session.current) if session.current else None
        head = (sqltext.leading_words(text, 1) or ["?"])[0]
        prev = hash_u16(head)
        ops = [head]
        if conn is not None:
            try:
                ops += [r[1] for r in conn.execute("EXPLAIN " + text).fetchall()]
            except sqlite3.Error:
                ops.append("error")
        for op in ops:
            cur = hash_u16(op)
            idx = (prev >> 1) ^ cur
            self.map[idx] = min(int(self.map[idx]) + 1, 255)
            prev = cur
        if hasattr(self.map, "flush"):
            self.map.flush()


def hash_u16(s: str) -> int:
    return int.from_bytes(hashlib.blake2s(s.encode(), digest_size=2).digest(), "little")


def run(stdin, stdout, stderr, faults: Faults, database: Optional[str] = None) -> int:
    session = Session()
    if database:
        session.databases[database] = _new_connection()
        session.current = database
    cov = Coverage()
    buf: List[str] = []
    line_no = 0
    start_line = 1
    status = 0
    for line in stdin:
        line_no += 1
        if not buf:
            if not line.strip():
                continue
            start_line = line_no
            if line.strip().lower() in ("quit", "exit", "\\q"):
                break
        buf.append(line)
        text = "".join(buf)
        if not sqltext.is_complete(text):
            continue
        buf = []
        for stmt in sqltext.split_statements(text):
            faults.before(stmt)
            try:
                rows = session.execute(stmt)
                for row in rows:
                    stdout.write("\t".join("NULL" if v is None else str(v) for v in row) + "\n")
                faults.after(stmt)
            except ServerError as err:
                status = 1
                stdout.flush()
                stderr.write(f"ERROR {err.code} ({err.state}) at line {start_line}: {err.message}\n")
            cov.record(session, stmt)
            stdout.flush()
            stderr.flush()
    return status


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="MySQL-flavoured SQL shell emulated on SQLite")
    ap.add_argument("--crash-on", action="append", default=[], metavar="REGEX")
    ap.add_argument("--arm", metavar="REGEX")
    ap.add_argument("--hang-on", action="append", default=[], metavar="REGEX")
    ap.add_argument("--database", "-D")
    # accepted for command-line compatibility with the real client
    for flag in ("--batch", "--skip-column-names", "--force", "--unbuffered", "-B", "-N", "-f", "-n"):
        ap.add_argument(flag, action="store_true")
    ap.add_argument("--user", "-u")
    ap.add_argument("--host")
    args, _ = ap.parse_known_args(argv)
    faults = Faults(
        crash_on=[re.compile(p, re.I | re.S) for p in args.crash_on],
        arm=re.compile(args.arm, re.I | re.S) if args.arm else None,
        hang_on=[re.compile(p, re.I | re.S) for p in args.hang_on],
    )
    return run(sys.stdin, sys.stdout, sys.stderr, faults, args.database)


if __name__ == "__main__":
    sys.exit(main())
