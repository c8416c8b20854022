"""Crash validation and proof-of-concept reduction.

A crash found during fuzzing is first *replayed*: the crashing case alone on a
freshly restarted target (``Isolated`` if it crashes again), then the whole
execution history of the session that crashed (``StateDependent`` if only
that reproduces it). Reproducible crashes are minimised by alternating

* delta debugging over the statement sequence (:func:`ddmin_statements`), and
* syntactic pruning of individual statements, visited from the last to the
  first (:func:`simplify_statement`),

until a full round changes nothing. The reduction oracle is "replay crashes
with the same dedup key", so a reduction never drifts to a different bug.

A history replay keeps the case boundaries of the original session: the
database is reset between cases exactly as it was while fuzzing, so what
carries over is the state that survives a reset (server variables, loaded
components, engine-internal caches...), which is what makes a crash
state-dependent.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from . import sqltext
from .executor.outcome import CrashEvidence, ExecutionOutcome
from .testcase import Statement, TestCase

log = logging.getLogger(__name__)

__all__ = [
    "CrashClass",
    "ExecutionHistory",
    "record_history",
    "OracleFlaky",
    "TargetUnavailable",
    "replay",
    "CrashOracle",
    "validate_crash",
    "ddmin_statements",
    "prune_candidates",
    "simplify_statement",
    "PocReport",
    "reduce",
    "load_poc",
    "RESET_MARKER",
]

RESET_MARKER = "-- @reset"


class CrashClass(enum.Enum):
    Isolated = "Isolated"
    StateDependent = "StateDependent"
    NonReproducible = "NonReproducible"


class OracleFlaky(RuntimeError):
    """The oracle did not confirm the unreduced input."""


class TargetUnavailable(RuntimeError):
    pass


# --------------------------------------------------------------------------
# history

@dataclass
class ExecutionHistory:
    """Statements executed since the last target restart, with case boundaries.

    ``entries`` is the flat statement stream; ``boundaries[k]`` is the index in
    ``entries`` where case ``k`` starts and ``case_ids[k]`` identifies it.
    """

    entries: List[str] = field(default_factory=list)
    boundaries: List[int] = field(default_factory=list)
    case_ids: List[str] = field(default_factory=list)
    generation: int = 0

    def clear(self, generation: int) -> None:
        self.entries.clear()
        self.boundaries.clear()
        self.case_ids.clear()
        self.generation = generation

    def append_case(self, texts: Sequence[str], case_id: str = "") -> None:
        self.boundaries.append(len(self.entries))
        self.case_ids.append(case_id)
        self.entries.extend(texts)

    def segments(self) -> List[List[str]]:
        """Per-case statement lists."""
        out = []
        for k, start in enumerate(self.boundaries):
            end = self.boundaries[k + 1] if k + 1 < len(self.boundaries) else len(self.entries)
            out.append(self.entries[start:end])
        return out

    def items(self) -> List[Tuple[int, str]]:
        """``(case index, statement)`` pairs -- the unit reduction works on."""
        return [(k, s) for k, seg in enumerate(self.segments()) for s in seg]

    def __len__(self) -> int:
        return len(self.entries)


def record_history(history: ExecutionHistory, case, outcome: ExecutionOutcome) -> ExecutionHistory:
    """Append the executed prefix of ``case``; start afresh if the target restarted."""
    if outcome.session_generation != history.generation:
        history.clear(outcome.session_generation)
    texts = case.texts if hasattr(case, "texts") else [getattr(s, "text", s) for s in case]
    executed = [sqltext.terminate(t) for t in texts[: outcome.executed]]
    history.append_case(executed, getattr(case, "case_id", ""))
    return history


# --------------------------------------------------------------------------
# replay

Items = List[Tuple[int, str]]


def _as_items(seq) -> Items:
    out: Items = []
    for x in seq:
        if isinstance(x, tuple):
            out.append((int(x[0]), str(x[1])))
        else:
            out.append((0, getattr(x, "text", x)))
    return out


def replay(driver, items: Items, oracle=None) -> ExecutionOutcome:
    """Restart the target and run ``items``, resetting the database between cases.

    Returns the outcome of the segment that crashed, or of the last segment.
    """
    try:
        driver.restart()
    except Exception as exc:  # pragma: no cover - depends on the target
        raise TargetUnavailable(str(exc)) from exc
    outcome = ExecutionOutcome(session_generation=driver.session_generation)
    if not items:
        return outcome
    for _, group in groupby(items, key=lambda it: it[0]):
        texts = [t for _, t in group]
        driver.reset_environment()
        outcome = driver.execute(texts, oracle)
        if outcome.crash is not None:
            break
    return outcome


class CrashOracle:
    """``items -> bool``: does replaying reproduce the crash identified by ``key``?"""

    def __init__(self, driver, key: Optional[str], cache: bool = True):
        self.driver = driver
        self.key = key
        self.calls = 0
        self.replays = 0
        self._cache: Dict[Tuple, bool] = {} if cache else None
        self.last_outcome: Optional[ExecutionOutcome] = None

    def __call__(self, items) -> bool:
        items = _as_items(items)
        self.calls += 1
        k = tuple(items)
        if self._cache is not None and k in self._cache:
            return self._cache[k]
        self.replays += 1
        outcome = replay(self.driver, items)
        self.last_outcome = outcome
        ok = outcome.crash is not None and (self.key is None or outcome.crash.dedup_key == self.key)
        if self._cache is not None:
            self._cache[k] = ok
        return ok


def validate_crash(case, history: ExecutionHistory, driver, evidence: Optional[CrashEvidence] = None) -> CrashClass:
    """Classify a crash by replaying the case alone, then the full history."""
    key = evidence.dedup_key if evidence is not None else None
    texts = [sqltext.terminate(t) for t in (case.texts if hasattr(case, "texts") else _texts(case))]
    alone = CrashOracle(driver, key, cache=False)
    if alone([(0, t) for t in texts]):
        return CrashClass.Isolated
    items = history.items()
    segs = history.segments()
    if not segs or not segs[-1] or segs[-1] != texts[: len(segs[-1])]:
        # the history must end with the crashing case
        nxt = len(segs)
        items = items + [(nxt, t) for t in texts]
    full = CrashOracle(driver, key, cache=False)
    if full(items):
        return CrashClass.StateDependent
    return CrashClass.NonReproducible


def _texts(seq) -> List[str]:
    return [getattr(s, "text", s) for s in seq]


# --------------------------------------------------------------------------
# delta debugging

def ddmin_statements(seq: Sequence, oracle: Callable[[list], bool], cache: bool = True) -> list:
    """Classic ddmin: a 1-minimal subsequence of ``seq`` on which ``oracle`` holds.

    ``oracle`` receives candidate subsequences (lists, original order). Raises
    :class:`OracleFlaky` if the oracle rejects ``seq`` itself.
    """
    seq = list(seq)
    memo: Dict[Tuple[int, ...], bool] = {}

    def test(idx: List[int]) -> bool:
        key = tuple(idx)
        if cache and key in memo:
            return memo[key]
        r = bool(oracle([seq[i] for i in idx]))
        if cache:
            memo[key] = r
        return r

    idx = list(range(len(seq)))
    if not test(idx):
        raise OracleFlaky("oracle does not hold on the full input")
    n = 2
    while len(idx) >= 2:
        chunks = _split(idx, n)
        for c in chunks:
            if test(c):
                idx, n = c, 2
                break
        else:
            for c in chunks if n > 2 else ():
                comp = [i for i in idx if i not in set(c)]
                if test(comp):
                    idx, n = comp, max(n - 1, 2)
                    break
            else:
                if n >= len(idx):
                    break
                n = min(len(idx), 2 * n)
    if len(idx) == 1 and test([]):
        idx = []
    return [seq[i] for i in idx]


def _split(idx: List[int], n: int) -> List[List[int]]:
    n = min(n, len(idx))
    size, extra = divmod(len(idx), n)
    out, start = [], 0
    for k in range(n):
        end = start + size + (1 if k < extra else 0)
        out.append(idx[start:end])
        start = end
    return out


# --------------------------------------------------------------------------
# statement pruning

_CLAUSE_WORDS = {"SELECT", "FROM", "WHERE", "HAVING", "LIMIT", "WINDOW", "RETURNING", "VALUES",
                 "UNION", "EXCEPT", "INTERSECT", "OFFSET"}
_PAIR_CLAUSES = {"GROUP": "BY", "ORDER": "BY"}
_REMOVABLE = {"WHERE", "HAVING", "LIMIT", "WINDOW", "RETURNING", "GROUP", "ORDER", "OFFSET",
              "UNION", "EXCEPT", "INTERSECT"}
_LIST_CLAUSES = {"SELECT", "FROM", "GROUP", "ORDER", "SET", "VALUES"}
_JOIN_WORDS = {"NATURAL", "LEFT", "RIGHT", "FULL", "INNER", "CROSS", "OUTER", "JOIN", "STRAIGHT_JOIN"}
_CONDITION_CLAUSES = {"WHERE", "HAVING"}


def _scopes(sig: Sequence[sqltext.Token]) -> List[Tuple[Optional[int], List[int]]]:
    """(index of the opening paren or None, token indices directly inside it)."""
    depths = sqltext.paren_depth_profile(sig)
    scopes = [(None, [i for i, d in enumerate(depths) if d == 0])]
    for k, t in enumerate(sig):
        if t.text != "(":
            continue
        inner = []
        for j in range(k + 1, len(sig)):
            if depths[j] == depths[k] + 1:
                inner.append(j)
            elif depths[j] <= depths[k]:
                break
        scopes.append((k, inner))
    return scopes


def _clauses(toks: List[sqltext.Token]) -> List[Tuple[str, int, int]]:
    """(keyword, start position, end position) of each clause in one scope."""
    starts = []
    is_update = bool(toks) and toks[0].is_word("UPDATE")
    for p, t in enumerate(toks):
        if t.kind != sqltext.WORD:
            continue
        u = t.upper
        if u in _CLAUSE_WORDS or (u == "SET" and is_update):
            starts.append((u, p))
        elif u in _PAIR_CLAUSES and p + 1 < len(toks) and toks[p + 1].upper == _PAIR_CLAUSES[u]:
            starts.append((u, p))
    out = []
    for k, (u, p) in enumerate(starts):
        end = starts[k + 1][1] if k + 1 < len(starts) else len(toks)
        if u in ("UNION", "EXCEPT", "INTERSECT"):
            # a compound arm runs up to the next compound operator / ORDER / LIMIT
            end = len(toks)
            for u2, p2 in starts[k + 1 :]:
                if u2 in ("UNION", "EXCEPT", "INTERSECT", "ORDER", "LIMIT"):
                    end = p2
                    break
        out.append((u, p, end))
    return out


def _split_top(toks, lo: int, hi: int, is_sep: Callable[[int], bool]) -> List[Tuple[int, int]]:
    parts, start = [], lo
    for p in range(lo, hi):
        if is_sep(p):
            parts.append((start, p))
            start = p + 1
    parts.append((start, hi))
    return [(a, b) for a, b in parts if b > a]


def _item_spans(toks, parts: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Character spans deleting one list element together with one separator."""
    spans = []
    for i, (a, b) in enumerate(parts):
        if i + 1 < len(parts):
            spans.append((toks[a].start, toks[parts[i + 1][0]].start))
        elif i > 0:
            spans.append((toks[parts[i - 1][1] - 1].end, toks[b - 1].end))
    return spans


def _conjunct_parts(toks, lo: int, hi: int) -> List[Tuple[int, int]]:
    between = [False]

    def sep(p: int) -> bool:
        t = toks[p]
        if t.is_word("BETWEEN"):
            between[0] = True
            return False
        if t.is_word("AND") and between[0]:
            between[0] = False
            return False
        return t.is_word("AND", "OR")

    return _split_top(toks, lo, hi, sep)


def _scope_candidates(toks: List[sqltext.Token], column_list: bool) -> List[Tuple[int, int]]:
    spans: List[Tuple[int, int]] = []
    if column_list:
        parts = _split_top(toks, 0, len(toks), lambda p: toks[p].text == ",")
        if len(parts) > 1:
            spans += _item_spans(toks, parts)
        return spans
    for kw, p, q in _clauses(toks):
        if kw in _REMOVABLE and p > 0:
            spans.append((toks[p].start, toks[q - 1].end))
        body = p + (2 if kw in _PAIR_CLAUSES else 1)
        if kw == "SELECT":
            while body < q and toks[body].is_word("DISTINCT", "ALL"):
                body += 1
        if kw in _LIST_CLAUSES:
            parts = _split_top(toks, body, q, lambda x: toks[x].text == ",")
            if kw == "FROM":
                parts = [(a, b) for a, b in parts]
            if len(parts) > 1:
                spans += _item_spans(toks, parts)
        if kw in _CONDITION_CLAUSES:
            parts = _conjunct_parts(toks, body, q)
            if len(parts) > 1:
                spans += _item_spans(toks, parts)
        if kw == "FROM":
            spans += _join_candidates(toks, body, q)
    return spans


def _join_candidates(toks, lo: int, hi: int) -> List[Tuple[int, int]]:
    starts = []
    for p in range(lo, hi):
        if toks[p].kind == sqltext.WORD and toks[p].upper in _JOIN_WORDS:
            if p == lo or not (toks[p - 1].kind == sqltext.WORD and toks[p - 1].upper in _JOIN_WORDS):
                starts.append(p)
    spans = []
    for k, p in enumerate(starts):
        q = starts[k + 1] if k + 1 < len(starts) else hi
        spans.append((toks[p].start, toks[q - 1].end))
        on = next((x for x in range(p, q) if toks[x].is_word("ON")), None)
        if on is not None:
            parts = _conjunct_parts(toks, on + 1, q)
            if len(parts) > 1:
                spans += _item_spans(toks, parts)
    return spans


def _is_create_table(sig) -> bool:
    words = [t.upper for t in sig[:6] if t.kind == sqltext.WORD]
    return bool(words) and words[0] == "CREATE" and "TABLE" in words[1:4]


def _delete(text: str, span: Tuple[int, int]) -> str:
    a, b = span
    left, right = text[:a].rstrip(), text[b:].lstrip()
    if not left:
        return right
    if not right:
        return left
    if right[0] in ",);" or left[-1] == "(":
        return left + right
    return left + " " + right


def prune_candidates(text: str) -> List[str]:
    """All single-pruning variants of ``text``, largest deletion first.

    Returns ``[]`` when the statement cannot be tokenised (unterminated
    quotes) -- such statements are left alone.
    """
    toks = sqltext.tokenize(text)
    if any(t.kind == sqltext.UNTERMINATED for t in toks):
        return []
    sig = [t for t in toks if t.significant]
    if sig and sig[-1].text == ";":
        sig = sig[:-1]
    create_paren = None
    if _is_create_table(sig):
        create_paren = next((k for k, t in enumerate(sig) if t.text == "("), None)
    spans = []
    for opener, inner in _scopes(sig):
        scope = [sig[i] for i in inner]
        spans += _scope_candidates(scope, column_list=opener is not None and opener == create_paren)
    seen, out = set(), []
    for span in sorted(set(spans), key=lambda s: (-(s[1] - s[0]), s[0])):
        cand = _delete(text, span)
        if cand == text or cand in seen or not sqltext.significant(sqltext.tokenize(cand)):
            continue
        if [t.text for t in sqltext.significant(sqltext.tokenize(cand))] == [";"]:
            continue
        seen.add(cand)
        out.append(cand)
    return out


def simplify_statement(stmt, oracle_in_context: Callable[[str], bool], log_steps: Optional[list] = None):
    """Greedily prune ``stmt`` while ``oracle_in_context(candidate_text)`` holds.

    Accepts a :class:`Statement` or text and returns the same type.
    """
    text = stmt.text if isinstance(stmt, Statement) else str(stmt)
    changed = True
    while changed:
        changed = False
        for cand in prune_candidates(text):
            ok = oracle_in_context(cand)
            if log_steps is not None:
                log_steps.append({"phase": "simplify", "accepted": bool(ok), "candidate": cand})
            if ok:
                text = cand
                changed = True
                break
    return Statement(text) if isinstance(stmt, Statement) else text


# --------------------------------------------------------------------------
# reports

@dataclass
class PocReport:
    statements: List[str]
    crash_class: CrashClass
    evidence: CrashEvidence
    reduction_log: List[dict] = field(default_factory=list)
    original_case_id: str = ""
    segments: List[int] = field(default_factory=list)  # case index per statement
    flaky: bool = False
    reproduced: bool = True
    one_minimal: bool = True
    oracle_calls: int = 0
    original_size: int = 0

    @property
    def items(self) -> Items:
        segs = self.segments or [0] * len(self.statements)
        return list(zip(segs, self.statements))

    def to_sql(self) -> str:
        lines, prev = [], None
        for seg, s in self.items:
            if prev is not None and seg != prev:
                lines.append(RESET_MARKER)
            lines.append(s)
            prev = seg
        return "\n".join(lines) + "\n"

    def meta(self) -> dict:
        return {
            "crash_class": self.crash_class.value,
            "dedup_key": self.evidence.dedup_key,
            "kind": self.evidence.kind,
            "signal_or_exit": self.evidence.signal_or_exit,
            "trigger_index": self.evidence.trigger_index,
            "original_case_id": self.original_case_id,
            "original_statements": self.original_size,
            "statements": len(self.statements),
            "cases": len(set(self.segments)) if self.segments else 1,
            "flaky": self.flaky,
            "reproduced": self.reproduced,
            "one_minimal": self.one_minimal,
            "oracle_calls": self.oracle_calls,
            "diagnostic_tail": list(self.evidence.diagnostic_tail),
        }

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "poc.sql").write_text(self.to_sql())
        (d / "meta.json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n")
        with open(d / "reduction.log", "w") as fh:
            for step in self.reduction_log:
                fh.write(json.dumps(step, sort_keys=True) + "\n")
        return d


def parse_poc_sql(text: str) -> Items:
    items: Items = []
    seg = 0
    buf: List[str] = []

    def flush():
        for s in sqltext.split_statements("\n".join(buf)):
            items.append((seg, s))
        buf.clear()

    for line in text.splitlines():
        if line.strip() == RESET_MARKER:
            flush()
            seg += 1
        else:
            buf.append(line)
    flush()
    return items


def load_poc(directory) -> Tuple[Items, dict]:
    d = Path(directory)
    items = parse_poc_sql((d / "poc.sql").read_text())
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    return items, meta


# --------------------------------------------------------------------------
# reduction driver

def reduce(
    case_or_history,
    driver,
    evidence: CrashEvidence,
    crash_class: CrashClass = CrashClass.Isolated,
    original_case_id: str = "",
    confirmations: int = 3,
    max_rounds: int = 20,
    oracle: Optional[Callable[[Items], bool]] = None,
) -> PocReport:
    """Minimise a crash reproducer.

    ``case_or_history`` is the crashing case (statements, a :class:`TestCase`),
    an :class:`ExecutionHistory`, or ``(case index, statement)`` items.
    """
    if isinstance(case_or_history, ExecutionHistory):
        items = case_or_history.items()
    elif isinstance(case_or_history, TestCase):
        items = [(0, t) for t in case_or_history.texts]
    else:
        items = _as_items(case_or_history)
    items = [(seg, sqltext.terminate(t)) for seg, t in items]
    check = oracle or CrashOracle(driver, evidence.dedup_key)
    steps: List[dict] = []
    report = PocReport(
        statements=[t for _, t in items],
        segments=[s for s, _ in items],
        crash_class=crash_class,
        evidence=evidence,
        reduction_log=steps,
        original_case_id=original_case_id,
        original_size=len(items),
    )

    def calls() -> int:
        return getattr(check, "calls", 0)

    # confirmation replays against flaky crashes (uncached)
    for k in range(confirmations):
        ok = CrashOracle(driver, evidence.dedup_key, cache=False)(items) if oracle is None else check(items)
        steps.append({"phase": "confirm", "round": k, "accepted": bool(ok)})
        if not ok:
            report.flaky = True
            report.reproduced = False
            report.one_minimal = False
            report.oracle_calls = calls() + k + 1
            log.warning("crash %s did not reproduce on confirmation %d; emitting unreduced", evidence.dedup_key, k)
            return report

    for rnd in range(max_rounds):
        changed = False
        try:
            reduced = ddmin_statements(items, check)
        except OracleFlaky:
            report.flaky = True
            steps.append({"phase": "ddmin", "round": rnd, "accepted": False, "detail": "oracle flaky"})
            break
        if len(reduced) < len(items):
            steps.append({"phase": "ddmin", "round": rnd, "accepted": True, "before": len(items), "after": len(reduced)})
            items = reduced
            changed = True
        else:
            steps.append({"phase": "ddmin", "round": rnd, "accepted": False, "before": len(items)})
        for i in range(len(items) - 1, -1, -1):
            seg, text = items[i]

            def in_context(cand: str, i=i, seg=seg) -> bool:
                trial = list(items)
                trial[i] = (seg, cand)
                return check(trial)

            new = simplify_statement(text, in_context, steps)
            if new != text:
                steps.append({"phase": "simplify", "round": rnd, "index": i, "accepted": True, "before": text, "after": new})
                items[i] = (seg, new)
                changed = True
        if not changed:
            steps.append({"phase": "round", "round": rnd, "detail": "no change; stopping"})
            break

    report.statements = [t for _, t in items]
    report.segments = [s for s, _ in items]
    # emission checks: reproduction and statement-level 1-minimality
    report.reproduced = bool(check(items))
    report.one_minimal = all(not check(items[:k] + items[k + 1 :]) for k in range(len(items)))
    report.oracle_calls = calls()
    steps.append({"phase": "emit", "reproduced": report.reproduced, "one_minimal": report.one_minimal,
                  "statements": len(items)})
    return report
