"""An in-process driver over SQLite with scripted crash behaviour.

Used where a real crashing target is not available: replay classification,
reduction and pipeline-determinism tests. Statements run against an
in-memory SQLite database (errors carry SQLite's own messages); before each
statement the :class:`CrashRule` list is consulted, and a matching rule
produces crash evidence exactly as a dying target would.

Rules can depend on session state -- a rule with ``requires="x"`` fires only
after a statement matching a rule with ``sets="x"`` has executed since the
last restart -- or fire only once per driver lifetime (``once=True``), which
models a crash that does not reproduce.
"""

from __future__ import annotations

import hashlib
import re
import sqlite3
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Set, Tuple, Union

from . import crash as crashlib
from .drivers import Driver, DriverKind, SessionDead
from .outcome import CrashEvidence, StatementResult

__all__ = ["CrashRule", "SimulatedDriver"]


@dataclass
class CrashRule:
    """Crash (or set a flag) when a statement matches ``pattern``.

    ``pattern`` is a regular expression searched in the statement text, or a
    predicate over it. A rule with only ``sets`` never crashes; it marks
    session state for rules with ``requires``.
    """

    pattern: Union[str, Callable[[str], bool]]
    requires: Optional[str] = None
    sets: Optional[str] = None
    crash: bool = True
    once: bool = False
    signal: int = 11
    frames: Optional[Sequence[str]] = None
    hang: bool = False
    fired: int = 0

    def matches(self, text: str) -> bool:
        if callable(self.pattern):
            return bool(self.pattern(text))
        return re.search(self.pattern, text, re.IGNORECASE | re.DOTALL) is not None

    def report(self, pid: int) -> List[str]:
        name = self.pattern if isinstance(self.pattern, str) else getattr(self.pattern, "__name__", "predicate")
        frames = list(self.frames) if self.frames else [
            "sim_" + hashlib.sha1(name.encode()).hexdigest()[:8], "sqlite3VdbeExec", "sqlite3_step", "main"
        ]
        base = 0x560000000000 + (pid << 12)
        lines = [f"=={pid}==ERROR: AddressSanitizer: SEGV on unknown address 0x{pid:012x}"]
        for k, fn in enumerate(frames):
            lines.append(f"    #{k} 0x{base + 0x100 * k:x} in {fn} sim.c:{10 + k}")
        lines.append(f"=={pid}==ABORTING")
        return lines


class SimulatedDriver(Driver):
    """Driver over in-process SQLite whose crashes are scripted by :class:`CrashRule`."""

    def __init__(self, rules: Sequence[CrashRule] = (), kind: DriverKind = DriverKind.Embedded, latency: float = 0.0):
        super().__init__()
        self.kind = kind
        self.rules = list(rules)
        self.latency = latency
        self.conn: Optional[sqlite3.Connection] = None
        self.flags: Set[str] = set()
        self._alive = False
        self._pid = 4000
        self.restarts = 0
        self.executed_total = 0

    def start(self) -> None:
        self.conn = sqlite3.connect(":memory:", isolation_level=None)
        self.flags = set()
        self._alive = True
        self._started = True
        self._pid += 1

    def stop(self) -> None:
        if self.conn is not None:
            self.conn.close()
        self.conn = None
        self._alive = False

    def restart(self) -> None:
        super().restart()
        self.restarts += 1

    @property
    def alive(self) -> bool:
        return self._alive

    def close(self) -> None:
        self.stop()

    def make_oracle(self):
        from .coverage import BehavioralOracle

        return BehavioralOracle()

    def _reset(self) -> None:
        if not self._alive:
            raise SessionDead("simulated target is down")
        if self.kind is DriverKind.ClientServer:
            from .drivers import CLIENT_SERVER_PRELUDE

            self.send_log.append(CLIENT_SERVER_PRELUDE)
        else:
            self.send_log.extend([".open tmp.db", ".open test.db"])
        self.conn.close()
        self.conn = sqlite3.connect(":memory:", isolation_level=None)

    def _run_statement(self, index: int, text: str) -> Tuple[StatementResult, Optional[CrashEvidence]]:
        self.send_log.append(text)
        self.executed_total += 1
        if self.latency:
            time.sleep(self.latency)
        for rule in self.rules:
            if not rule.matches(text):
                continue
            if rule.requires is not None and rule.requires not in self.flags:
                continue
            if rule.once and rule.fired:
                continue
            if rule.sets is not None and not rule.crash:
                continue  # flag rules apply after successful execution
            if rule.crash or rule.hang:
                rule.fired += 1
                self._alive = False
                if rule.hang:
                    return StatementResult("hang", None, "no answer"), crashlib.make_hang(index, text)
                ev = crashlib.make_evidence(index, -rule.signal, rule.report(self._pid))
                return StatementResult("crash", None, crashlib.describe_status(-rule.signal)), ev
        started = time.monotonic()
        try:
            rows = self.conn.execute(text).fetchall()
            res = StatementResult("ok", None, "", time.monotonic() - started, "\n".join("|".join(map(str, r)) for r in rows))
        except sqlite3.Warning as exc:
            res = StatementResult("error", None, str(exc), time.monotonic() - started)
        except sqlite3.Error as exc:
            res = StatementResult("error", None, str(exc), time.monotonic() - started)
        if res.ok:
            for rule in self.rules:
                if rule.sets is not None and not rule.crash and rule.matches(text):
                    self.flags.add(rule.sets)
        return res, None
