"""Result types produced by the execution drivers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple


@dataclass(frozen=True)
class StatementResult:
    status: str  # "ok" | "error"
    code: Optional[int] = None
    message: str = ""
    elapsed: float = 0.0
    output: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class CrashEvidence:
    trigger_index: int
    signal_or_exit: int  # negative: signal number; positive: exit status; 0 for hangs
    diagnostic_tail: Tuple[str, ...]
    dedup_key: str
    kind: str = "crash"  # crash | hang

    @property
    def is_hang(self) -> bool:
        return self.kind == "hang"


@dataclass
class ExecutionOutcome:
    per_statement: List[StatementResult] = field(default_factory=list)
    crash: Optional[CrashEvidence] = None
    coverage_new_edges: int = 0
    session_generation: int = 0

    @property
    def executed(self) -> int:
        return len(self.per_statement)

    @property
    def errors(self) -> List[Tuple[int, StatementResult]]:
        return [(i, r) for i, r in enumerate(self.per_statement) if r.status == "error"]

    @property
    def clean(self) -> bool:
        return self.crash is None and not self.errors
