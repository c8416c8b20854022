"""Execution drivers: persistent sessions with an embedded shell or a client.

A driver owns one target process and talks to it over pipes, one statement at
a time. After each statement it sends a *sentinel* command whose only effect
is to echo a unique token; everything the target prints before the token
belongs to that statement. Errors are recognised by the client's own error
prefix, crashes by end-of-stream plus the exit status, hangs by a
per-statement timeout.

Two session flavours are provided:

* :class:`EmbeddedDriver` drives an SQLite-style shell (``sqlite3
  -interactive``); the database is reset by alternating ``.open tmp.db`` /
  ``.open test.db`` and truncating whichever file is inactive;
* :class:`ClientServerDriver` drives a MySQL-style command-line client; the
  database is reset with ``DROP DATABASE IF EXISTS test_db; CREATE DATABASE
  test_db; USE test_db;``.
"""

from __future__ import annotations

import collections
import enum
import itertools
import logging
import os
import queue
import re
import shlex
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .. import sqltext
from . import crash as crashlib
from .coverage import (
    BehavioralOracle,
    FileMap,
    MapUnavailable,
    SharedMapOracle,
    SysVSharedMemory,
)
from .outcome import CrashEvidence, ExecutionOutcome, StatementResult

log = logging.getLogger(__name__)

__all__ = [
    "DriverKind",
    "TargetConfig",
    "SessionDead",
    "TargetUnavailable",
    "Driver",
    "ProcessDriver",
    "EmbeddedDriver",
    "ClientServerDriver",
    "make_driver",
    "CLIENT_SERVER_PRELUDE",
    "EMBEDDED_FILES",
]

CLIENT_SERVER_PRELUDE = "DROP DATABASE IF EXISTS test_db; CREATE DATABASE test_db; USE test_db;"
EMBEDDED_FILES = ("tmp.db", "test.db")


class DriverKind(enum.Enum):
    ClientServer = "client_server"
    Embedded = "embedded"


class SessionDead(RuntimeError):
    """The target process is gone."""


class TargetUnavailable(RuntimeError):
    """The target cannot be launched or does not answer."""


@dataclass
class TargetConfig:
    """How to launch and talk to one target."""

    command: List[str]
    kind: DriverKind = DriverKind.Embedded
    prelude: Optional[str] = None  # overrides the client-server reset statement
    statement_timeout: float = 5.0
    startup_timeout: float = 20.0
    coverage: str = "behavioral"  # behavioral | shared_map
    workdir: Optional[str] = None
    env: Dict[str, str] = field(default_factory=dict)
    database: str = "test_db"

    def __post_init__(self):
        if isinstance(self.command, str):
            self.command = shlex.split(self.command)
        if not self.command:
            raise ValueError("target command must not be empty")
        if isinstance(self.kind, str):
            self.kind = DriverKind(self.kind)
        if self.statement_timeout <= 0:
            raise ValueError("statement_timeout must be positive")
        if self.coverage not in ("behavioral", "shared_map"):
            raise ValueError(f"unknown coverage mode {self.coverage!r}")

    @classmethod
    def from_mapping(cls, data: Mapping, base_dir: Optional[Path] = None) -> "TargetConfig":
        data = dict(data)
        command = data.pop("command", None) or data.pop("binary", None)
        if command is None:
            raise ValueError("target needs a command")
        if isinstance(command, str):
            command = shlex.split(command)
        command = [sys.executable if c == "{python}" else c for c in command]
        args = data.pop("args", [])
        return cls(command=list(command) + list(args), **data)

    @classmethod
    def sqlite_shell(cls, binary: str = "sqlite3", **kw) -> "TargetConfig":
        return cls(command=[binary], kind=DriverKind.Embedded, **kw)

    @classmethod
    def emulated_server(cls, *flags: str, **kw) -> "TargetConfig":
        """The bundled MySQL-flavoured client emulator."""
        cmd = [sys.executable, "-m", "sqlfuzz.executor.sqlshell", "--batch", "--force", "--unbuffered", *flags]
        return cls(command=cmd, kind=DriverKind.ClientServer, **kw)


# --------------------------------------------------------------------------
# the driver interface

class Driver:
    """Common driver behaviour: reset, per-case execution, coverage, logs.

    Subclasses implement ``start``/``stop``/``alive``/``_reset`` and
    ``_run_statement``. ``send_log`` records every statement transmitted to the
    target (reset preludes included, sentinels excluded);
    ``statement_log`` records the case statements executed since the last
    restart and is cleared on restart.
    """

    kind: DriverKind = DriverKind.Embedded

    def __init__(self):
        self.session_generation = 0
        self.send_log: List[str] = []
        self.statement_log: List[str] = []
        self._started = False
        self._fallback = BehavioralOracle()

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> None:
        raise NotImplementedError

    def stop(self) -> None:
        raise NotImplementedError

    @property
    def alive(self) -> bool:
        raise NotImplementedError

    def restart(self) -> None:
        self.stop()
        self.start()
        self.session_generation += 1
        self.statement_log.clear()

    def __enter__(self):
        if not self._started:
            self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    def make_oracle(self):
        return BehavioralOracle()

    # -- reset and execution -----------------------------------------------
    def _reset(self) -> None:
        raise NotImplementedError

    def _run_statement(self, index: int, text: str) -> Tuple[StatementResult, Optional[CrashEvidence]]:
        raise NotImplementedError

    def reset_environment(self) -> None:
        if not self._started:
            self.start()
        elif not self.alive:
            log.info("target not alive before reset; restarting")
            self.restart()
        try:
            self._reset()
        except SessionDead:
            log.info("target died during reset; restarting")
            self.restart()
            self._reset()

    def execute(self, case, oracle=None) -> ExecutionOutcome:
        """Run ``case`` statement by statement in the current session."""
        if not self._started or not self.alive:
            raise SessionDead("execute called without a live session; reset first")
        texts = case.texts if hasattr(case, "texts") else [getattr(s, "text", s) for s in case]
        if isinstance(oracle, SharedMapOracle):
            oracle.clear_backing()
        results: List[StatementResult] = []
        evidence = None
        texts = [sqltext.terminate(t) for t in texts]
        for i, text in enumerate(texts):
            res, evidence = self._run_statement(i, text)
            results.append(res)
            self.statement_log.append(text)
            if evidence is not None:
                break
        outcome = ExecutionOutcome(results, evidence, 0, self.session_generation)
        outcome.coverage_new_edges = self._coverage(oracle, texts[: len(results)], results)
        return outcome

    def run_case(self, case, oracle=None) -> ExecutionOutcome:
        self.reset_environment()
        return self.execute(case, oracle)

    def _coverage(self, oracle, texts, results) -> int:
        if oracle is None:
            return 0
        if isinstance(oracle, SharedMapOracle):
            try:
                trace = oracle.read_backing()
                return oracle.delta(trace)
            except MapUnavailable as exc:
                log.warning("coverage map unavailable (%s); using behavioural coverage for this case", exc)
                return self._fallback.delta(texts, results)
        return oracle.delta(texts, results)


# --------------------------------------------------------------------------
# subprocess sessions

_EOF = object()


class ProcessDriver(Driver):
    """A persistent child process fed through stdin, read through a merged stdout/stderr pipe."""

    error_re: re.Pattern = re.compile(r"$^")

    def __init__(self, config: TargetConfig):
        super().__init__()
        self.config = config
        self.kind = config.kind
        self.proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue" = queue.Queue()
        self._reader: Optional[threading.Thread] = None
        self._tokens = itertools.count()
        self._output: Deque[str] = collections.deque(maxlen=200)
        self.wire_log = bytearray()  # every byte written to the target
        self._own_workdir: Optional[tempfile.TemporaryDirectory] = None
        self.workdir: Optional[Path] = Path(config.workdir) if config.workdir else None
        self._map = None

    # -- lifecycle ---------------------------------------------------------
    def _ensure_map(self):
        if self.config.coverage != "shared_map" or self._map is not None:
            return
        try:
            self._map = SysVSharedMemory()
        except MapUnavailable as exc:
            log.warning("SysV shared memory unavailable (%s); using a file-backed map", exc)
            self._map = FileMap(self._workdir() / "coverage.map")

    def make_oracle(self):
        self._ensure_map()
        if self._map is not None:
            return SharedMapOracle(backing=self._map)
        return BehavioralOracle()

    def _workdir(self) -> Path:
        if self.workdir is None:
            self._own_workdir = tempfile.TemporaryDirectory(prefix="sqlfuzz-target-")
            self.workdir = Path(self._own_workdir.name)
        self.workdir.mkdir(parents=True, exist_ok=True)
        return self.workdir

    def launch_command(self) -> List[str]:
        return list(self.config.command)

    def start(self) -> None:
        env = dict(os.environ)
        env.update(self.config.env)
        self._ensure_map()
        if self._map is not None:
            env.update(self._map.env)
        src_root = str(Path(__file__).resolve().parents[2])
        env["PYTHONPATH"] = os.pathsep.join(p for p in (src_root, env.get("PYTHONPATH")) if p)
        try:
            self.proc = subprocess.Popen(
                self.launch_command(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                cwd=str(self._workdir()),
                env=env,
                bufsize=0,
            )
        except OSError as exc:
            raise TargetUnavailable(f"cannot launch {self.config.command[0]}: {exc}") from exc
        self._lines = queue.Queue()
        self._reader = threading.Thread(target=self._pump, args=(self.proc, self._lines), daemon=True)
        self._reader.start()
        self._started = True
        self._output.clear()
        self._handshake()

    @staticmethod
    def _pump(proc, lines: "queue.Queue") -> None:
        buf = b""
        while True:
            try:
                chunk = proc.stdout.read1(65536) if hasattr(proc.stdout, "read1") else os.read(proc.stdout.fileno(), 65536)
            except (OSError, ValueError):
                chunk = b""
            if not chunk:
                if buf:
                    lines.put(buf.decode("utf-8", "replace"))
                lines.put(_EOF)
                return
            buf += chunk
            *complete, buf = buf.split(b"\n")
            for raw in complete:
                lines.put(raw.decode("utf-8", "replace"))

    def _handshake(self) -> None:
        """Wait until the target answers a sentinel; discards banners."""
        lines, status = self._roundtrip(None, self.config.startup_timeout)
        if status != "ok":
            code = self.proc.poll() if self.proc else None
            self.stop()
            raise TargetUnavailable(f"target did not answer at startup (status {status}, exit {code}): {lines[-5:]}")

    def stop(self) -> None:
        proc, self.proc = self.proc, None
        if proc is None:
            return
        try:
            if proc.poll() is None:
                try:
                    proc.stdin.close()
                except OSError:
                    pass
                try:
                    proc.wait(timeout=1.0)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait(timeout=5.0)
        finally:
            for s in (proc.stdin, proc.stdout):
                try:
                    s.close()
                except Exception:
                    pass

    def close(self) -> None:
        self.stop()
        if self._map is not None:
            self._map.close()
            self._map = None
        if self._own_workdir is not None:
            self._own_workdir.cleanup()
            self._own_workdir = None

    @property
    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    # -- wire protocol -----------------------------------------------------
    def sentinel_command(self, token: str) -> str:
        raise NotImplementedError

    def _write(self, text: str) -> None:
        data = text.encode()
        self.wire_log += data
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError, AttributeError):
            pass  # the reader sees EOF

    def _roundtrip(self, payload: Optional[str], timeout: float) -> Tuple[List[str], str]:
        """Send ``payload`` plus a sentinel; return (output lines, ok|eof|timeout)."""
        if self.proc is None:
            return [], "eof"
        token = f"__SQLFUZZ_{os.getpid()}_{next(self._tokens)}__"
        wire = "" if payload is None else payload + "\n"
        self._write(wire + self.sentinel_command(token) + "\n")
        out: List[str] = []
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return out, "timeout"
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                return out, "timeout"
            if line is _EOF:
                return out, "eof"
            if line.strip() == token:
                return out, "ok"
            if token in line:  # sentinel glued to unterminated output
                out.append(line.replace(token, ""))
                return out, "ok"
            out.append(line)
            self._output.append(line)

    def _exit_status(self) -> int:
        if self.proc is None:
            return 0
        try:
            return self.proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            return self.proc.wait(timeout=5.0)

    def _kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            try:
                self.proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:  # pragma: no cover
                pass

    # -- statements ---------------------------------------------------------
    def parse_error(self, lines: Sequence[str]) -> Optional[Tuple[Optional[int], str]]:
        for line in lines:
            m = self.error_re.match(line)
            if m:
                code = m.groupdict().get("code")
                return (int(code) if code else None), m.group("msg").strip()
        return None

    def local_error(self, text: str) -> Optional[StatementResult]:
        """Statements rejected without contacting the target."""
        if text.lstrip().startswith("."):
            return StatementResult("error", None, "shell meta-commands are not allowed in test cases")
        return None

    def _run_statement(self, index, text):
        local = self.local_error(text)
        if local is not None:
            return local, None
        started = time.monotonic()
        self.send_log.append(text)
        lines, status = self._roundtrip(text, self.config.statement_timeout)
        elapsed = time.monotonic() - started
        if status == "timeout":
            self._kill()
            return (
                StatementResult("hang", None, f"no answer within {self.config.statement_timeout:g}s", elapsed),
                crashlib.make_hang(index, text, lines),
            )
        if status == "eof":
            code = self._exit_status()
            tail = list(lines)
            self._drain_into(tail)
            ev = crashlib.make_evidence(index, code, tail)
            return StatementResult("crash", None, crashlib.describe_status(code), elapsed, "\n".join(lines)), ev
        if any(crashlib.SANITIZER_RE.search(l) for l in lines):
            self._kill()
            ev = crashlib.make_evidence(index, 0, lines)
            return StatementResult("crash", None, "sanitizer report", elapsed, "\n".join(lines)), ev
        err = self.parse_error(lines)
        if err is not None:
            return StatementResult("error", err[0], err[1], elapsed, "\n".join(lines)), None
        return StatementResult("ok", None, "", elapsed, "\n".join(lines)), None

    def _drain_into(self, tail: List[str]) -> None:
        while True:
            try:
                line = self._lines.get_nowait()
            except queue.Empty:
                return
            if line is _EOF:
                return
            tail.append(line)
            self._output.append(line)


class EmbeddedDriver(ProcessDriver):
    """An SQLite-style interactive shell holding the database in a file."""

    error_re = re.compile(r"^(?:Parse error|Runtime error|Error)(?: near line \d+)?: (?P<msg>.*)$")

    def __init__(self, config: TargetConfig):
        if config.kind is not DriverKind.Embedded:
            raise ValueError("EmbeddedDriver needs an embedded target config")
        super().__init__(config)
        self.active_file = EMBEDDED_FILES[1]

    def launch_command(self) -> List[str]:
        cmd = list(self.config.command)
        if "-interactive" not in cmd:
            cmd.append("-interactive")
        return cmd + [EMBEDDED_FILES[1]]

    def start(self) -> None:
        super().start()
        self._write(".prompt '' ''\n")
        self._roundtrip(None, self.config.startup_timeout)
        self.active_file = EMBEDDED_FILES[1]

    def sentinel_command(self, token: str) -> str:
        return f".print {token}"

    def _truncate(self, name: str) -> None:
        base = self._workdir() / name
        for suffix in ("", "-journal", "-wal", "-shm"):
            p = Path(str(base) + suffix)
            if p.exists():
                if suffix:
                    p.unlink()
                else:
                    with open(p, "r+b") as fh:
                        fh.truncate(0)

    def reset_commands(self) -> List[str]:
        return [f".open {EMBEDDED_FILES[0]}", f".open {EMBEDDED_FILES[1]}"]

    def _reset(self) -> None:
        first, second = self.reset_commands()
        for cmd, inactive in ((first, EMBEDDED_FILES[1]), (second, EMBEDDED_FILES[0])):
            self.send_log.append(cmd)
            _, status = self._roundtrip(cmd, self.config.startup_timeout)
            if status != "ok":
                raise SessionDead(f"shell stopped answering during reset ({status})")
            self._truncate(inactive)
        self.active_file = EMBEDDED_FILES[1]

    def local_error(self, text: str) -> Optional[StatementResult]:
        bad = super().local_error(text)
        if bad is not None:
            return bad
        if not sqltext.is_complete(text):
            return StatementResult("error", None, "incomplete input")
        return None


class ClientServerDriver(ProcessDriver):
    """A MySQL-style client session against a server-held database."""

    error_re = re.compile(r"^ERROR (?P<code>\d+)(?: \(\w+\))?(?: at line \d+)?: (?P<msg>.*)$")

    def __init__(self, config: TargetConfig):
        if config.kind is not DriverKind.ClientServer:
            raise ValueError("ClientServerDriver needs a client-server target config")
        super().__init__(config)

    @property
    def prelude(self) -> str:
        if self.config.prelude:
            return self.config.prelude
        if self.config.database == "test_db":
            return CLIENT_SERVER_PRELUDE
        d = self.config.database
        return f"DROP DATABASE IF EXISTS {d}; CREATE DATABASE {d}; USE {d};"

    def sentinel_command(self, token: str) -> str:
        return f"SELECT '{token}';"

    def _reset(self) -> None:
        self.send_log.append(self.prelude)
        lines, status = self._roundtrip(self.prelude, self.config.startup_timeout)
        if status != "ok":
            raise SessionDead(f"client stopped answering during reset ({status})")
        err = self.parse_error(lines)
        if err is not None:
            raise TargetUnavailable(f"reset failed: {err}")

    def local_error(self, text: str) -> Optional[StatementResult]:
        bad = super().local_error(text)
        if bad is not None:
            return bad
        if not sqltext.is_complete(text):
            return StatementResult("error", 1064, "You have an error in your SQL syntax (unterminated statement)")
        return None


def make_driver(config: TargetConfig) -> ProcessDriver:
    if config.kind is DriverKind.ClientServer:
        return ClientServerDriver(config)
    return EmbeddedDriver(config)
