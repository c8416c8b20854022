"""Error tagging, classification and the execute-repair loop.

Every DBMS error is attached to the statement that produced it and classified
by an ordered, per-dialect pattern table. The category decides the route:

* SAF (syntax-aware filtering) -- duplicate definitions and unsupported
  features are dropped; syntax errors are dropped when the statement is a
  shallow SELECT without vendor features and otherwise kept for model repair;
* RBR (rule-based repair) -- plugin/component, setting and formatting errors
  get a local rewrite; a miss escalates to SAR;
* SAR (semantic-aware repair) -- everything else goes to the model with the
  error message and, where the table provides one, a repair suggestion.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from . import sqltext
from .dialect import Dialect, load_dialect
from .executor.outcome import ExecutionOutcome
from .llm import ModelError, ModelParams, NoJsonArray, PromptKind, build_repair_prompt, parse_sql_array
from .schema import SchemaContext, register
from .testcase import Statement, TestCase

log = logging.getLogger(__name__)

__all__ = [
    "ErrorCategory",
    "Route",
    "ROUTES",
    "route_of",
    "ErrorRecord",
    "ClassifierRule",
    "ClassifierTable",
    "load_classifier",
    "tag_errors",
    "FilterDecision",
    "syntax_filter",
    "rule_repair",
    "semantic_repair",
    "RepairResult",
    "repair_loop",
]


class ErrorCategory(enum.Enum):
    Syntax = "Syntax"
    DuplicateDefinition = "DuplicateDefinition"
    UnsupportedFeature = "UnsupportedFeature"
    PluginComponent = "PluginComponent"
    InappropriateSetting = "InappropriateSetting"
    Formattable = "Formattable"
    InvalidObjectReference = "InvalidObjectReference"
    PreconditionsMissing = "PreconditionsMissing"
    IncorrectFeatureUsage = "IncorrectFeatureUsage"
    ViolateConstraints = "ViolateConstraints"
    Unknown = "Unknown"


class Route(enum.Enum):
    SAF = "SAF"
    RBR = "RBR"
    SAR = "SAR"


ROUTES: Mapping[ErrorCategory, Route] = {
    ErrorCategory.Syntax: Route.SAF,
    ErrorCategory.DuplicateDefinition: Route.SAF,
    ErrorCategory.UnsupportedFeature: Route.SAF,
    ErrorCategory.PluginComponent: Route.RBR,
    ErrorCategory.InappropriateSetting: Route.RBR,
    ErrorCategory.Formattable: Route.RBR,
    ErrorCategory.InvalidObjectReference: Route.SAR,
    ErrorCategory.PreconditionsMissing: Route.SAR,
    ErrorCategory.IncorrectFeatureUsage: Route.SAR,
    ErrorCategory.ViolateConstraints: Route.SAR,
    ErrorCategory.Unknown: Route.SAR,
}


def route_of(category: ErrorCategory) -> Route:
    return ROUTES[category]


@dataclass(frozen=True)
class ErrorRecord:
    statement_index: int
    code: Optional[int]
    message: str
    category: ErrorCategory
    suggestion: Optional[str] = None
    fixer: Optional[str] = None
    groups: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def route(self) -> Route:
        return ROUTES[self.category]


# --------------------------------------------------------------------------
# classifier tables

@dataclass(frozen=True)
class ClassifierRule:
    category: ErrorCategory
    pattern: re.Pattern
    suggestion: Optional[str] = None
    fixer: Optional[str] = None
    line: int = 0


@dataclass(frozen=True)
class ClassifierTable:
    dialect: str
    rules: Tuple[ClassifierRule, ...]

    def __post_init__(self):
        if not self.rules or self.rules[-1].category is not ErrorCategory.Unknown or self.rules[-1].pattern.pattern != ".*":
            raise ValueError(f"classifier table {self.dialect!r} must end with the catch-all 'Unknown | .*' rule")

    def match(self, code: Optional[int], message: str) -> Tuple[ClassifierRule, Dict[str, str]]:
        subject = f"{code} {message}" if code is not None else message
        for rule in self.rules:
            m = rule.pattern.search(subject)
            if m:
                groups = {k: v for k, v in m.groupdict().items() if v is not None}
                if rule.pattern.groupindex and not groups:
                    # a code-only alternative won; the message alternative carries the groups
                    m2 = rule.pattern.search(message)
                    if m2:
                        groups = {k: v for k, v in m2.groupdict().items() if v is not None}
                return rule, groups
        raise AssertionError("unreachable: catch-all rule did not match")  # pragma: no cover

    def classify(self, code: Optional[int], message: str) -> ErrorCategory:
        return self.match(code, message)[0].category


def parse_rules(text: str, dialect: str) -> ClassifierTable:
    rules: List[ClassifierRule] = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(" | ")]
        if len(parts) != 4:
            raise ValueError(f"{dialect}.rules line {n}: expected 4 fields separated by ' | ', got {len(parts)}")
        cat, pat, sugg, fixer = parts
        try:
            category = ErrorCategory[cat]
        except KeyError:
            raise ValueError(f"{dialect}.rules line {n}: unknown category {cat!r}") from None
        rules.append(
            ClassifierRule(
                category,
                re.compile(pat),
                None if sugg == "-" else sugg,
                None if fixer == "-" else fixer,
                n,
            )
        )
    return ClassifierTable(dialect, tuple(rules))


def load_classifier(name_or_path: Union[str, Dialect]) -> ClassifierTable:
    """Bundled table for a dialect id, or a rules file by path."""
    if isinstance(name_or_path, Dialect):
        name_or_path = name_or_path.name
    path = Path(name_or_path)
    if path.suffix == ".rules" and path.exists():
        return parse_rules(path.read_text(encoding="utf-8"), path.stem)
    res = resources.files("sqlfuzz.data.errors") / f"{name_or_path}.rules"
    if not res.is_file():
        raise FileNotFoundError(f"no classifier table for dialect {name_or_path!r}")
    return parse_rules(res.read_text(encoding="utf-8"), str(name_or_path))


def _render_suggestion(template: Optional[str], groups: Mapping[str, str]) -> Optional[str]:
    if template is None:
        return None
    try:
        return template.format(**groups)
    except (KeyError, IndexError):
        return re.sub(r"\{\w+\}", "the object", template)


def tag_errors(outcome: ExecutionOutcome, testcase, table: ClassifierTable) -> List[ErrorRecord]:
    """One classified record per failed statement of ``outcome``."""
    n = len(testcase)
    records = []
    for i, res in enumerate(outcome.per_statement):
        if res.status != "error":
            continue
        if i >= n:
            raise IndexError(f"outcome has a result for statement {i} but the case has {n}")
        rule, groups = table.match(res.code, res.message)
        records.append(
            ErrorRecord(i, res.code, res.message, rule.category, _render_suggestion(rule.suggestion, groups), rule.fixer, groups)
        )
    return records


# --------------------------------------------------------------------------
# syntax-aware filtering

_SELECT_HEADS = ("SELECT", "WITH", "VALUES")


@dataclass(frozen=True)
class FilterDecision:
    record: ErrorRecord
    keep: bool
    reason: str


def _statement_list(testcase) -> List[Statement]:
    if isinstance(testcase, TestCase):
        return testcase.statements
    return [s if isinstance(s, Statement) else Statement(s) for s in testcase]


def syntax_filter(testcase, records: Sequence[ErrorRecord], min_select_depth: int = 3):
    """Decide which failing statements are worth repairing.

    Returns ``(decisions, retained)`` where ``retained`` are the records whose
    statements stay in the case. Statements carrying vendor feature keywords
    are never dropped.
    """
    stmts = _statement_list(testcase)
    decisions: List[FilterDecision] = []
    for r in records:
        st = stmts[r.statement_index]
        if st.feature_flags:
            decisions.append(FilterDecision(r, True, "feature statement"))
        elif r.category in (ErrorCategory.DuplicateDefinition, ErrorCategory.UnsupportedFeature):
            decisions.append(FilterDecision(r, False, r.category.value))
        elif r.category is ErrorCategory.Syntax:
            head = sqltext.leading_words(st.text, 1)
            if head and head[0] in _SELECT_HEADS and sqltext.select_depth(st.text) < min_select_depth:
                decisions.append(FilterDecision(r, False, "shallow select"))
            else:
                decisions.append(FilterDecision(r, True, "syntax error worth repairing"))
        else:
            decisions.append(FilterDecision(r, True, "repairable"))
    return decisions, [d.record for d in decisions if d.keep]


# --------------------------------------------------------------------------
# rule-based repair

def _tokens(text: str):
    return sqltext.tokenize(text)


def _values_rows(toks) -> List[Tuple[int, int, List[Tuple[int, int]]]]:
    """(open, close, [(start, end) per item]) for each parenthesised row after VALUES."""
    rows = []
    sig = [t for t in toks if t.significant]
    try:
        k = next(i for i, t in enumerate(sig) if t.is_word("VALUES"))
    except StopIteration:
        return rows
    i = k + 1
    while i < len(sig) and sig[i].text == "(":
        depth = 0
        items = []
        item_start = sig[i].end
        j = i
        while j < len(sig):
            t = sig[j]
            if t.text == "(":
                depth += 1
            elif t.text == ")":
                depth -= 1
                if depth == 0:
                    items.append((item_start, t.start))
                    break
            elif t.text == "," and depth == 1:
                items.append((item_start, t.start))
                item_start = t.end
            j += 1
        rows.append((sig[i].start, sig[j].start if j < len(sig) else len(toks), items))
        i = j + 1
        if i < len(sig) and sig[i].text == ",":
            i += 1
    return rows


def _replace_spans(text: str, spans: Sequence[Tuple[int, int, str]]) -> str:
    out = []
    last = 0
    for s, e, new in sorted(spans):
        out.append(text[last:s])
        out.append(new)
        last = e
    out.append(text[last:])
    return "".join(out)


def _insert_columns(text: str, toks, context: Optional[SchemaContext]) -> Optional[List[str]]:
    """Column names an INSERT targets: explicit list, else the table's definition."""
    sig = [t for t in toks if t.significant]
    target = None
    for i, t in enumerate(sig):
        if t.is_word("INTO") and i + 1 < len(sig):
            target = i + 1
            break
    if target is None:
        return None
    j = target + 1
    if j < len(sig) and sig[j].text == "(":
        cols = []
        while j < len(sig) and sig[j].text != ")":
            if sig[j].kind in (sqltext.WORD, sqltext.QUOTED):
                cols.append(sig[j].text.strip('`"[]'))
            j += 1
        return cols
    if context is not None:
        obj = context.get(sig[target].text.strip('`"[]'))
        if obj is not None:
            return obj.column_names
    return None


def _fix_geometry(text, record, dialect: Dialect, context):
    if not dialect.geometry_constructor:
        return None
    geo = dialect.geometry_literal((dialect.literals.get("geometry") or ("POINT(0 0)",))[0])
    toks = _tokens(text)
    cols = _insert_columns(text, toks, context)
    geo_cols = None
    if cols is not None and context is not None:
        sig = [t for t in toks if t.significant]
        into = next((i for i, t in enumerate(sig) if t.is_word("INTO")), None)
        obj = context.get(sig[into + 1].text) if into is not None and into + 1 < len(sig) else None
        if obj is not None:
            types = {c.name: c.data_type.upper() for c in obj.columns}
            geo_cols = {i for i, c in enumerate(cols) if "GEOMETRY" in types.get(c, "") or types.get(c, "") in (
                "POINT", "LINESTRING", "POLYGON")}
    spans = []
    for _, _, items in _values_rows(toks):
        for k, (s, e) in enumerate(items):
            if geo_cols is not None and k not in geo_cols:
                continue
            item = text[s:e].strip()
            if re.match(r"^(?:ST_\w+|POINT|LINESTRING|POLYGON)\s*\(", item, re.IGNORECASE) or item.upper() == "NULL":
                continue
            if geo_cols is None and not item.startswith("'"):
                continue  # without a schema only string literals are suspect
            spans.append((s, e, " " + geo if text[s:s + 1] == " " else geo))
    if not spans:
        return None
    return _replace_spans(text, spans)


_SET_RE = re.compile(
    r"^(\s*SET\s+(?:(?:GLOBAL|SESSION|PERSIST|PERSIST_ONLY|LOCAL)\s+|@@(?:global|session)\.)?)(\w+)(\s*(?:=|:=|TO)\s*)(.+?)(\s*;?\s*)$",
    re.IGNORECASE | re.DOTALL,
)


def _fix_setting(text, record, dialect: Dialect, context):
    m = _SET_RE.match(text)
    if not m:
        return None
    name = record.groups.get("name", m.group(2))
    spec = dialect.settings.get(name.lower()) or dialect.settings.get(m.group(2).lower())
    if spec is None or m.group(4).strip() == spec.default:
        return None
    return m.group(1) + m.group(2) + m.group(3) + spec.default + m.group(5)


def _fix_set_scope(text, record, dialect, context, scope: str):
    m = re.match(r"^(\s*SET\s+)(?:(?:GLOBAL|SESSION|LOCAL)\s+)?", text, re.IGNORECASE)
    if not m:
        return None
    fixed = m.group(1) + scope.upper() + " " + text[m.end():]
    return fixed if fixed != text else None


def _fix_component(text, record, dialect: Dialect, context):
    options = list(dialect.fill.get("components", ()))
    if not options:
        return None
    bad = record.groups.get("name")
    toks = _tokens(text)
    spans = []
    for t in toks:
        if t.kind == sqltext.STRING and (bad is None or t.text[1:-1] == bad):
            repl = next((o for o in options if o != t.text[1:-1]), None)
            if repl is None:
                return None
            spans.append((t.start, t.end, f"'{repl}'"))
            if bad is None:
                break
    return _replace_spans(text, spans) if spans else None


def _fix_engine(text, record, dialect: Dialect, context):
    options = list(dialect.fill.get("engines", ()))
    m = re.search(r"(ENGINE\s*=?\s*)(\w+)", text, re.IGNORECASE)
    if not m or not options:
        return None
    repl = next((o for o in options if o.lower() != m.group(2).lower()), None)
    return text[: m.start(2)] + repl + text[m.end(2):] if repl else None


def _fix_module(text, record, dialect: Dialect, context):
    modules = list(dialect.fill.get("modules", ()))
    m = re.search(r"(\bUSING\s+)(\w+)(\s*\(([^)]*)\))?", text, re.IGNORECASE)
    if not m or not modules:
        return None
    current = m.group(2).lower()
    repl = "fts5" if "fts5" in modules and current != "fts5" else next((x for x in modules if x != current), None)
    if repl is None:
        return None
    args = (m.group(4) or "").strip()
    if repl == "fts5":
        names = [a.strip().split()[0] for a in args.split(",") if a.strip() and re.match(r"^\w", a.strip())]
        args = ", ".join(names) or "a0"
    elif repl == "rtree":
        args = "id, x0, x1"
    return text[: m.start()] + m.group(1) + f"{repl}({args})" + text[m.end():]


def _literal_for_type(data_type: str, dialect: Dialect) -> str:
    spec = dialect.type_spec(data_type)
    if spec is None:
        t = data_type.upper()
        if any(k in t for k in ("INT", "REAL", "NUM", "DEC", "DOUB", "FLOA")):
            return "0"
        return "''"
    if spec.literal == "enum":
        return (spec.enum_values or ["''"])[0]
    if spec.literal == "geometry" and dialect.geometry_constructor:
        return dialect.geometry_literal((dialect.literals.get("geometry") or ("POINT(0 0)",))[0])
    pool = dialect.literals.get(spec.literal) or ("0",)
    return pool[0] if spec.literal != "text" else (pool[1] if len(pool) > 1 else pool[0])


def _fix_column(text, record, dialect: Dialect, context):
    col = record.groups.get("column")
    toks = _tokens(text)
    cols = _insert_columns(text, toks, context)
    if not col or cols is None or col not in cols:
        return None
    idx = cols.index(col)
    dtype = ""
    if context is not None:
        obj = context.get(record.groups.get("table", "")) if record.groups.get("table") else None
        if obj is None:
            sig = [t for t in toks if t.significant]
            into = next((i for i, t in enumerate(sig) if t.is_word("INTO")), None)
            obj = context.get(sig[into + 1].text) if into is not None and into + 1 < len(sig) else None
        if obj is not None:
            dtype = next((c.data_type for c in obj.columns if c.name == col), "")
    lit = _literal_for_type(dtype, dialect) if dtype else "0"
    spans = []
    for _, _, items in _values_rows(toks):
        if idx < len(items):
            s, e = items[idx]
            if text[s:e].strip() != lit:
                spans.append((s, e, (" " if text[s:s + 1] == " " else "") + lit))
    return _replace_spans(text, spans) if spans else None


def _fix_values_count(text, record, dialect: Dialect, context):
    toks = _tokens(text)
    want = int(record.groups["want"]) if "want" in record.groups else None
    if want is None:
        cols = _insert_columns(text, toks, context)
        want = len(cols) if cols else None
    if not want:
        return None
    spans = []
    for _, close, items in _values_rows(toks):
        if len(items) == want:
            continue
        if len(items) > want:
            spans.append((items[want - 1][1], items[-1][1], ""))
        else:
            spans.append((close, close, ", NULL" * (want - len(items))))
    return _replace_spans(text, spans) if spans else None


def _fix_replace_value(text, record, dialect, context, replacement: str):
    value = record.groups.get("value")
    if value is None:
        return None
    quoted = "'" + value.replace("'", "''") + "'"
    toks = _tokens(text)
    spans = [(t.start, t.end, replacement) for t in toks if t.kind == sqltext.STRING and t.text == quoted]
    return _replace_spans(text, spans) if spans else None


def _fix_shorten(text, record, dialect, context):
    toks = _tokens(text)
    spans = [(t.start, t.end, t.text[:2] + "'") for t in toks if t.kind == sqltext.STRING and len(t.text) > 3]
    return _replace_spans(text, spans) if spans else None


_FIXERS: Dict[str, Callable] = {
    "geometry_literal": _fix_geometry,
    "clamp_setting": _fix_setting,
    "set_scope": _fix_set_scope,
    "replace_component": _fix_component,
    "replace_engine": _fix_engine,
    "replace_module": _fix_module,
    "coerce_column": _fix_column,
    "fix_values_count": _fix_values_count,
    "replace_value": _fix_replace_value,
    "shorten_strings": _fix_shorten,
}


def rule_repair(
    record: ErrorRecord,
    stmt: Union[Statement, str],
    dialect: Union[str, Dialect],
    context: Optional[SchemaContext] = None,
) -> Optional[Statement]:
    """Local rewrite for a rule-routed error, or ``None`` (escalate to SAR)."""
    d = dialect if isinstance(dialect, Dialect) else load_dialect(dialect)
    text = stmt.text if isinstance(stmt, Statement) else stmt
    if record.route is not Route.RBR or not record.fixer:
        return None
    name, _, arg = record.fixer.partition(":")
    fixer = _FIXERS.get(name)
    if fixer is None:
        log.warning("unknown fixer %r in classifier table", name)
        return None
    fixed = fixer(text, record, d, context, arg) if arg else fixer(text, record, d, context)
    if fixed is None or fixed.strip() == text.strip():
        return None
    return Statement(fixed)


# --------------------------------------------------------------------------
# semantic-aware repair

_DEFAULT_SUGGESTION = {
    ErrorCategory.InvalidObjectReference: "Generate a statement that creates the missing object and insert it in front of this statement",
    ErrorCategory.PreconditionsMissing: "Establish the missing precondition in front of this statement",
}


def _prompt_record(r: ErrorRecord) -> ErrorRecord:
    """Attach suggestions per category; constraint and usage errors carry only the message."""
    if r.category in (ErrorCategory.ViolateConstraints, ErrorCategory.IncorrectFeatureUsage):
        return replace(r, suggestion=None)
    if r.suggestion is None and r.category in _DEFAULT_SUGGESTION:
        return replace(r, suggestion=_DEFAULT_SUGGESTION[r.category])
    return r


def semantic_repair(
    testcase,
    records: Sequence[ErrorRecord],
    context: Optional[SchemaContext],
    client,
    dialect: Union[str, Dialect],
    params: Optional[ModelParams] = None,
):
    """Ask the model for a fixed case.

    Returns ``(case, context, ok)``; on any model or parsing failure the
    input case comes back unchanged with ``ok=False``.
    """
    if not records:
        raise ValueError("semantic repair needs at least one record")
    d = dialect if isinstance(dialect, Dialect) else load_dialect(dialect)
    stmts = _statement_list(testcase)
    case = testcase if isinstance(testcase, TestCase) else TestCase.from_statements(stmts)
    prompt = build_repair_prompt(stmts, [_prompt_record(r) for r in records], d)
    try:
        answer = client.complete(prompt, params or ModelParams())
        fixed = parse_sql_array(answer)
    except (ModelError, NoJsonArray) as exc:
        log.info("semantic repair failed: %s", exc)
        return case, context, False
    if not fixed:
        return case, context, False
    ctx = context
    if ctx is not None:
        for s in fixed:
            ctx, _ = register(ctx, s)
    return TestCase.from_statements(fixed, lineage=case.lineage), ctx, True


# --------------------------------------------------------------------------
# the loop

@dataclass
class RepairResult:
    case: TestCase
    outcome: ExecutionOutcome
    rounds: int = 0
    model_calls: int = 0
    repair_failed: bool = False
    converged: bool = False
    records: List[ErrorRecord] = field(default_factory=list)  # classification of the final outcome
    dropped: int = 0
    rule_fixes: int = 0
    attempts: int = 0  # SAR attempts
    successes: int = 0  # SAR attempts that returned a usable case


def repair_loop(
    testcase: TestCase,
    execute: Callable[[TestCase], ExecutionOutcome],
    table: ClassifierTable,
    client,
    context: Optional[SchemaContext],
    max_rounds: int = 3,
    dialect: Union[str, Dialect] = "sqlite",
    params: Optional[ModelParams] = None,
) -> RepairResult:
    """Execute, classify, filter, rule-repair and model-repair until clean.

    ``execute`` must reset the environment before running the case. The loop
    stops when an execution leaves no SAR-routed error, when a crash shows
    up, when nothing changes, or after ``max_rounds`` repair rounds (each
    with at most one model call).
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    d = dialect if isinstance(dialect, Dialect) else load_dialect(dialect)
    case = testcase
    outcome = execute(case)
    res = RepairResult(case, outcome)
    while True:
        res.case, res.outcome = case, outcome
        if outcome.crash is not None:
            res.records = tag_errors(outcome, case, table)
            break
        records = tag_errors(outcome, case, table)
        res.records = records
        if not records:
            res.converged = True
            break
        decisions, retained = syntax_filter(case, records)
        stmts = case.statements
        drop = {dd.record.statement_index for dd in decisions if not dd.keep}
        new_stmts: List[Optional[Statement]] = list(stmts)
        sar: List[ErrorRecord] = []
        fixes = 0
        for r in retained:
            if r.route is Route.RBR:
                fixed = rule_repair(r, stmts[r.statement_index], d, context)
                if fixed is not None:
                    new_stmts[r.statement_index] = fixed
                    fixes += 1
                    continue
            sar.append(r)
        if not sar and not drop and not fixes:
            # only unfixable rule-routed errors remain: nothing more to do locally
            res.converged = True
            break
        if res.rounds >= max_rounds:
            res.repair_failed = bool(sar)
            break
        res.rounds += 1
        res.dropped += len(drop)
        res.rule_fixes += fixes
        # positions after dropping
        kept_idx = [i for i in range(len(stmts)) if i not in drop]
        remap = {old: new for new, old in enumerate(kept_idx)}
        kept = [new_stmts[i] for i in kept_idx]
        next_case = TestCase.from_statements(kept, lineage=case.lineage)
        if sar:
            sar_records = [replace(r, statement_index=remap[r.statement_index]) for r in sar]
            res.attempts += 1
            res.model_calls += 1
            repaired, context, ok = semantic_repair(kept, sar_records, context, client, d, params)
            if ok:
                res.successes += 1
                next_case = repaired
            elif not (drop or fixes):
                res.repair_failed = True
                break
        if next_case.texts == case.texts:
            res.repair_failed = bool(sar)
            break
        case = next_case
        outcome = execute(case)
    res.case, res.outcome = case, outcome
    return res
