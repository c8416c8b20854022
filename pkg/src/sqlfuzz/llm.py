"""Prompt construction, model clients and response parsing.

Two prompts exist: instantiation (schema + skeletal templates -> concrete
statements) and repair (a whole test case with the failing statements marked).
Both ask for a JSON array of SQL strings back.

Clients implement ``complete(prompt, params) -> str``. ``HttpChatClient``
speaks the common chat-completions JSON protocol; ``MockClient`` answers from
a script or from built-in rules so nothing here needs a network.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
import re
import socket
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from . import sqltext
from .dialect import Dialect, load_dialect
from .schema import SchemaContext, SchemaObject, parse_create

log = logging.getLogger(__name__)

__all__ = [
    "ModelParams",
    "PromptKind",
    "Prompt",
    "ModelError",
    "Timeout",
    "TransportError",
    "EndpointError",
    "EmptyTemplates",
    "IndexOutOfRange",
    "NoJsonArray",
    "build_instantiation_prompt",
    "build_repair_prompt",
    "parse_sql_array",
    "complete",
    "HttpChatClient",
    "MockClient",
    "UnreachableClient",
    "REPAIR_OPEN",
    "REPAIR_CLOSE",
]

CHARS_PER_TOKEN = 4
REPAIR_OPEN = "-- [Need to repair<"
REPAIR_CLOSE = "-- >Need to repair]"


class ModelError(RuntimeError):
    """Any failure to obtain a completion; never fatal to a campaign."""


class Timeout(ModelError):
    pass


class TransportError(ModelError):
    pass


class EndpointError(ModelError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"endpoint returned HTTP {status}: {detail[:200]}")
        self.status = status


class EmptyTemplates(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class NoJsonArray(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    temperature: float = 0.4
    max_context_tokens: int = 8192
    endpoint: str = "http://127.0.0.1:8000/v1/chat/completions"
    model_name: str = "default"
    request_timeout: float = 120.0
    concurrency: int = 4

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_context_tokens < 1:
            raise ValueError("max_context_tokens must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be positive")


class PromptKind(enum.Enum):
    Instantiation = "instantiation"
    Repair = "repair"


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    text: str
    target_dialect: str


def _dialect(d: Union[str, Dialect]) -> Dialect:
    return d if isinstance(d, Dialect) else load_dialect(d)


# --------------------------------------------------------------------------
# prompt building

_INSTANTIATION = """\
Here we initialize a database test_db by executing the initialization SQL statements:
```sql
{init_schema_statements}
```

Please instantiate the following SQL statements using the guidance of the given SQL templates:
```sql
{sql_templates}
```

The generated SQL statements must satisfy the following requirements:
- They must be syntactically and semantically correct.
- They must be executable in {targetDB}.
- Each subsequent statement must reference only objects created by previous statements (e.g., tables, views, or columns).

You are allowed to complete the necessary parts of the templates.
Return only the SQL statements generated from the templates.
Do not repeat the initialization SQL statements or include any other content.

Before output, correct any syntax or semantic errors in the generated SQL statements.
Output the result in JSON format.

Example response:
["SQL1;", "SQL2;", ...]
"""

_REPAIR = """\
We need you to fix a SQL test case that contains erroneous SQL statements.

The input test case contains multiple SQL statements. SQL statements that require repair are explicitly marked using the following format:

-- [Need to repair<
<SQL statement>
-- <error message>
-- (repair suggestion)
-- >Need to repair]

Here is the input test case:
```sql
{casecontent}
```

You should fix each erroneous SQL statement using:
- the surrounding SQL context,
- the error message, and
- the repair suggestion if provided.

Target database: {targetDB}.

Do not output anything other than SQL statements.
Output the fully fixed test case in JSON format.

Example response:
["SQL1;", "SQL2;", ...]
"""

_BLOCK_RE = re.compile(r"```sql\n(.*?)```", re.DOTALL)


def _truncate_init(lines: List[str], budget_chars: int, fixed_chars: int) -> List[str]:
    """Drop the oldest INSERTs until the prompt fits; CREATEs are kept."""
    total = fixed_chars + sum(len(s) + 1 for s in lines)
    if total <= budget_chars:
        return lines
    out = list(lines)
    dropped = 0
    i = 0
    while total > budget_chars and i < len(out):
        if sqltext.leading_words(out[i], 1) == ["INSERT"]:
            total -= len(out[i]) + 1
            del out[i]
            dropped += 1
        else:
            i += 1
    log.warning("prompt over budget: dropped %d oldest INSERT statements", dropped)
    return out


def build_instantiation_prompt(
    context: SchemaContext,
    templates: Sequence,
    dialect: Union[str, Dialect],
    max_context_tokens: Optional[int] = None,
) -> Prompt:
    """Fill the instantiation skeleton with the schema block and the templates.

    ``templates`` may hold :class:`SqlTemplate` objects or plain strings.
    """
    if not templates:
        raise EmptyTemplates("no templates to instantiate")
    d = _dialect(dialect)
    tmpl_text = "\n".join(getattr(t, "text", t) for t in templates)
    init = list(context.init_statements)
    if max_context_tokens is not None:
        fixed = len(_INSTANTIATION) + len(tmpl_text) + len(d.display_name)
        init = _truncate_init(init, max_context_tokens * CHARS_PER_TOKEN, fixed)
    text = _INSTANTIATION.format(
        init_schema_statements="\n".join(init), sql_templates=tmpl_text, targetDB=d.display_name
    )
    return Prompt(PromptKind.Instantiation, text, d.name)


def _one_line(msg: str) -> str:
    return " ".join(msg.split())


def build_repair_prompt(testcase, errors: Sequence, dialect: Union[str, Dialect]) -> Prompt:
    """Mark every statement named by ``errors`` and fill the repair skeleton.

    ``errors`` are records with ``statement_index``, ``message`` and an
    optional ``suggestion``. Several records on one statement share a block.
    """
    if not errors:
        raise ValueError("repair prompt needs at least one error")
    d = _dialect(dialect)
    stmts = [getattr(s, "text", s) for s in (testcase.statements if hasattr(testcase, "statements") else testcase)]
    by_index: Dict[int, List] = {}
    for e in errors:
        if not 0 <= e.statement_index < len(stmts):
            raise IndexOutOfRange(f"error index {e.statement_index} outside case of {len(stmts)} statements")
        by_index.setdefault(e.statement_index, []).append(e)
    lines: List[str] = []
    for i, s in enumerate(stmts):
        text = s if s.rstrip().endswith(";") else s + ";"
        if i not in by_index:
            lines.append(text)
            continue
        lines.append(REPAIR_OPEN)
        lines.append(text)
        for e in by_index[i]:
            lines.append(f"-- {_one_line(e.message)}")
        for e in by_index[i]:
            if getattr(e, "suggestion", None):
                lines.append(f"-- ({_one_line(e.suggestion)})")
        lines.append(REPAIR_CLOSE)
    text = _REPAIR.format(casecontent="\n".join(lines), targetDB=d.display_name)
    return Prompt(PromptKind.Repair, text, d.name)


# --------------------------------------------------------------------------
# response parsing

def parse_sql_array(response: str) -> List[str]:
    """Statements from the first JSON array of strings found in ``response``.

    Prose and code fences around the array are ignored; elements are
    stripped and blank ones dropped.
    """
    decoder = json.JSONDecoder()
    pos = response.find("[")
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(response, pos)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return [v.strip() for v in value if v.strip()]
        pos = response.find("[", pos + 1)
    raise NoJsonArray(f"no JSON string array in response: {response[:120]!r}")


# --------------------------------------------------------------------------
# clients

def complete(client, prompt: Prompt, params: ModelParams) -> str:
    return client.complete(prompt, params)


class HttpChatClient:
    """Chat-completions client over plain HTTP (no SDK dependency)."""

    order_sensitive = False

    def __init__(self, endpoint: Optional[str] = None, model_name: Optional[str] = None, api_key: Optional[str] = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.api_key = api_key
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: Prompt, params: ModelParams) -> str:
        body = {
            "model": self.model_name or params.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": params.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(
            self.endpoint or params.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST"
        )
        with self._lock:
            self.calls += 1
        try:
            with urllib.request.urlopen(req, timeout=params.request_timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise EndpointError(exc.code, exc.read().decode("utf-8", "replace")) from exc
        except (socket.timeout, TimeoutError) as exc:
            raise Timeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise Timeout(str(exc.reason)) from exc
            raise TransportError(str(exc.reason)) from exc
        except (OSError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(200, f"unexpected payload shape: {str(payload)[:200]}") from exc


class UnreachableClient:
    """Always fails with a transport error; models an endpoint outage."""

    order_sensitive = False

    def __init__(self):
        self.calls = 0

    def complete(self, prompt: Prompt, params: ModelParams) -> str:
        self.calls += 1
        raise TransportError("model endpoint unreachable")


@dataclass
class _ScriptEntry:
    match: Optional[re.Pattern]
    responses: List[str]
    served: int = 0


class MockClient:
    """Deterministic stand-in for a model endpoint.

    ``mode="scripted"`` replays responses from a script mapping prompt kind
    (``"instantiation"`` / ``"repair"``) to a list of entries
    ``{"match": <regex or null>, "responses": [...]}``; the first entry whose
    regex matches the prompt serves its responses in order, repeating the
    last. A bare string or list of strings is shorthand for one catch-all
    entry. Kinds absent from the script fall back to the rules.

    ``mode="rules"`` derives answers from the prompt alone: placeholders are
    filled from the schema block and repair prompts get pattern-based fixes.
    The answer is a pure function of the prompt text.
    """

    def __init__(self, script: Optional[Union[Mapping, str, Path]] = None, dialect: Union[str, Dialect] = "sqlite"):
        self.dialect = _dialect(dialect)
        self.call_log: List[Tuple[PromptKind, str]] = []
        self._lock = threading.Lock()
        self._entries: Dict[PromptKind, List[_ScriptEntry]] = {}
        if script is not None:
            if isinstance(script, (str, Path)):
                with open(script, "r", encoding="utf-8") as fh:
                    script = json.load(fh)
            self._load(script)

    @property
    def mode(self) -> str:
        return "scripted" if self._entries else "rules"

    @property
    def order_sensitive(self) -> bool:
        return bool(self._entries)

    @property
    def calls(self) -> int:
        return len(self.call_log)

    def calls_of(self, kind: PromptKind) -> int:
        return sum(1 for k, _ in self.call_log if k is kind)

    def _load(self, script: Mapping) -> None:
        for key, spec in script.items():
            kind = PromptKind(key.lower())
            if isinstance(spec, str):
                spec = [{"match": None, "responses": [spec]}]
            elif isinstance(spec, list) and all(isinstance(s, str) for s in spec):
                spec = [{"match": None, "responses": list(spec)}]
            entries = []
            for item in spec:
                pat = item.get("match")
                responses = item["responses"]
                if isinstance(responses, str):
                    responses = [responses]
                responses = [r if isinstance(r, str) else json.dumps(r) for r in responses]
                entries.append(_ScriptEntry(re.compile(pat, re.DOTALL) if pat else None, responses))
            self._entries[kind] = entries

    def complete(self, prompt: Prompt, params: Optional[ModelParams] = None) -> str:
        with self._lock:
            self.call_log.append((prompt.kind, prompt.text))
            for entry in self._entries.get(prompt.kind, ()):
                if entry.match is None or entry.match.search(prompt.text):
                    r = entry.responses[min(entry.served, len(entry.responses) - 1)]
                    entry.served += 1
                    return r
        if prompt.kind is PromptKind.Instantiation:
            return json.dumps(RuleFiller(self.dialect, prompt.text).instantiate())
        return json.dumps(rule_repair_response(prompt.text, self.dialect))


# --------------------------------------------------------------------------
# rule-based answers

def _blocks(prompt_text: str) -> List[str]:
    return _BLOCK_RE.findall(prompt_text)


def _context_from_block(block: str) -> Tuple[List[SchemaObject], Dict[str, List[str]]]:
    objs: List[SchemaObject] = []
    for s in sqltext.split_statements(block):
        o = parse_create(s)
        if o is not None and o.kind in ("table", "view"):
            objs.append(o)
    return objs, {o.name: o.column_names for o in objs}


def _seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


_PLACEHOLDER_RE = re.compile(r"\[([A-Za-z_][A-Za-z0-9_\-]*)\]")


class RuleFiller:
    """Fills ``[leaf]`` placeholders from the schema shown in a prompt."""

    def __init__(self, dialect: Dialect, prompt_text: str):
        self.dialect = dialect
        blocks = _blocks(prompt_text)
        init = blocks[0] if blocks else ""
        self.templates = [t.strip() for t in (blocks[1] if len(blocks) > 1 else "").splitlines() if t.strip()]
        objs, self.columns = _context_from_block(init)
        self.tables = [o.name for o in objs if o.kind == "table"] or ["t0"]
        if not objs:
            self.columns = {"t0": ["c0"]}
        self.views = [o.name for o in objs if o.kind == "view"]
        self.rng = random.Random(_seed(prompt_text))
        self.fresh_table = 0
        while f"t{self.fresh_table}" in self.columns:
            self.fresh_table += 1

    def instantiate(self) -> List[str]:
        return [self.fill(t) for t in self.templates]

    def _lit(self, cls: str = "int") -> str:
        pool = self.dialect.literals.get(cls) or ("1",)
        return self.rng.choice(pool)

    def fill(self, template: str) -> str:
        self.table_idx = 0
        self.current = self.tables[0]
        self.counters: Dict[str, int] = {}
        # the object a CREATE ... TABLE template defines must be new
        self.create_pending = bool(re.match(r"^\s*CREATE\s+(?:TEMP\w*\s+|VIRTUAL\s+)?TABLE\b", template, re.I))
        out = _PLACEHOLDER_RE.sub(lambda m: self._value(m.group(1)), template)
        out = out.strip()
        return out if out.endswith(";") else out + ";"

    def _next(self, key: str) -> int:
        n = self.counters.get(key, 0)
        self.counters[key] = n + 1
        return n

    def _cols(self) -> List[str]:
        return self.columns.get(self.current) or ["c0"]

    def _expr(self) -> str:
        c = self.rng.choice(self._cols())
        forms = [
            f"{c} = {self._lit()}",
            f"{c} > {self._lit()}",
            f"{c} IS NULL",
            f"{c} IN ({self._lit()}, {self._lit()})",
            f"{c} + 1",
            c,
            self._lit(),
            f"{self.current}.{c} != {self._lit()}",
        ]
        return self.rng.choice(forms)

    def _value(self, name: str) -> str:
        fill = self.dialect.fill
        key = name.lower()
        if key == "tablename" and self.create_pending:
            self.create_pending = False
            return self._value("newTableName")
        if key in ("tablename", "objectname"):
            self.current = self.tables[self.table_idx % len(self.tables)]
            self.table_idx += 1
            return self.current
        if key == "newtablename":
            name_ = f"t{self.fresh_table}"
            self.fresh_table += 1
            return name_
        if key == "columnname":
            return self.rng.choice(self._cols())
        if key == "newcolumnname":
            return f"c{len(self._cols()) + self._next('newcol')}"
        if key in ("expr", "expression"):
            return self._expr()
        if key == "literal":
            return self._lit(self.rng.choice(["int", "text"]))
        if key == "alterspecification":
            return f"ADD COLUMN c{len(self._cols()) + self._next('newcol')} INT"
        if key == "partitiondefinitions":
            return f"PARTITION BY HASH({self._cols()[0]}) PARTITIONS 2"
        if key == "indexname":
            return f"i{self._next('index')}"
        if key == "viewname":
            return f"v{len(self.views) + self._next('view')}"
        if key == "triggername":
            return f"tr{self._next('trigger')}"
        if key == "savepointname":
            return "sp0"
        if key in ("typename", "datatype"):
            return self.rng.choice(self.dialect.types).name
        if key == "pragmaname":
            return self.rng.choice(fill.get("pragmas", ("cache_size",)))
        if key == "pragmavalue":
            return self.rng.choice(fill.get("pragma_values", ("0",)))
        if key == "modulename":
            return self.rng.choice(fill.get("modules", ("fts5",)))
        if key == "moduleargument":
            return f"a{self._next('modarg')}"
        if key == "collationname":
            return self.rng.choice(fill.get("collations", ("BINARY",)))
        if key == "functionname":
            return self.rng.choice(fill.get("functions", ("abs",)))
        if key in ("columnalias", "alias"):
            return f"a{self._next('alias')}"
        if key == "tablealias":
            return f"ta{self._next('talias')}"
        if key == "ctename":
            return f"cte{self._next('cte')}"
        if key == "windowname":
            return f"w{self._next('window')}"
        if key == "enginename":
            return self.rng.choice(fill.get("engines", ("InnoDB",)))
        if key == "charsetname":
            return self.rng.choice(fill.get("charsets", ("utf8mb4",)))
        if key == "componentname":
            return "'" + self.rng.choice(fill.get("components", ("file://component_validate_password",))) + "'"
        if key == "variablename":
            names = list(self.dialect.settings) or ["sql_mode"]
            return self.rng.choice(names)
        if key == "procedurename":
            return f"p{self._next('proc') + 1}"
        if key == "parametername":
            return f"x{self._next('param')}"
        if key == "databasename":
            return "test_db"
        return self._lit()


# repair heuristics ------------------------------------------------------------

_MISSING_TABLE = [
    re.compile(r"no such table: (?:\w+\.)?(\w+)"),
    re.compile(r"Table '(?:\w+\.)?(\w+)' doesn't exist"),
]
_MISSING_PROC = re.compile(r"PROCEDURE (?:\w+\.)?(\w+) does not exist")
_AMBIGUOUS = [
    re.compile(r"ambiguous column name: (?:\w+\.)*?(\w+)\.(\w+)$"),
    re.compile(r"ambiguous column name: (\w+)$"),
    re.compile(r"Column '([\w.]+)' in [\w ]+ is ambiguous"),
]
_GEOMETRY = re.compile(r"Cannot get geometry object", re.IGNORECASE)


def _parse_repair_case(prompt_text: str):
    """Yield (statement, [error lines], [suggestion lines]) from a repair prompt."""
    blocks = _blocks(prompt_text)
    body = blocks[0] if blocks else ""
    out = []
    marked = False
    current: List[str] = []
    msgs: List[str] = []
    sugg: List[str] = []
    for line in body.splitlines():
        if line.strip() == REPAIR_OPEN:
            marked, current, msgs, sugg = True, [], [], []
            continue
        if line.strip() == REPAIR_CLOSE:
            out.append(("\n".join(current), msgs, sugg))
            marked = False
            continue
        if marked:
            if line.startswith("-- (") and line.rstrip().endswith(")"):
                sugg.append(line[4:].rstrip()[:-1])
            elif line.startswith("-- "):
                msgs.append(line[3:])
            else:
                current.append(line)
        elif line.strip():
            out.append((line, [], []))
    # statements spanning several unmarked lines (procedure bodies) are re-joined
    merged: List[Tuple[str, List[str], List[str]]] = []
    buf = ""
    for stmt, m, s in out:
        if m or s:
            if buf:
                merged.extend((x, [], []) for x in sqltext.split_statements(buf))
                buf = ""
            merged.append((stmt, m, s))
        else:
            buf += stmt + "\n"
    if buf:
        merged.extend((x, [], []) for x in sqltext.split_statements(buf))
    return merged


def _alias_duplicate_table(stmt: str) -> Optional[str]:
    """Give the last unaliased repeat of a table in FROM/JOIN lists an alias."""
    toks = sqltext.tokenize(stmt)
    sig = [t for t in toks if t.significant]
    seen: Dict[str, int] = {}
    target = None
    for i, t in enumerate(sig):
        if t.kind != sqltext.WORD or i == 0:
            continue
        prev = sig[i - 1]
        if not (prev.is_word("FROM", "JOIN") or prev.text in (",", "(")):
            continue
        if t.upper in {"SELECT", "WITH", "VALUES", "LATERAL"} or not re.match(r"^\w+$", t.text):
            continue
        nxt = sig[i + 1] if i + 1 < len(sig) else None
        aliased = nxt is not None and (nxt.is_word("AS") or (nxt.kind == sqltext.WORD and not nxt.is_word(
            "JOIN", "INNER", "LEFT", "RIGHT", "CROSS", "NATURAL", "FULL", "ON", "USING", "WHERE", "GROUP",
            "ORDER", "LIMIT", "HAVING", "WINDOW", "UNION", "EXCEPT", "INTERSECT", "OUTER", "INDEXED", "NOT")))
        if prev.text in (",", "(") and not _in_from(sig, i):
            continue
        key = t.text.lower()
        seen[key] = seen.get(key, 0) + 1
        if seen[key] > 1 and not aliased:
            target = t
    if target is None:
        return None
    alias = "ref_0"
    k = 0
    while re.search(rf"\b{alias}\b", stmt):
        k += 1
        alias = f"ref_{k}"
    return stmt[: target.end] + f" AS {alias}" + stmt[target.end :]


def _in_from(sig, i: int) -> bool:
    depth = 0
    for j in range(i - 1, -1, -1):
        t = sig[j]
        if t.text == ")":
            depth += 1
        elif t.text == "(":
            if depth == 0:
                continue
            depth -= 1
        elif depth == 0 and t.kind == sqltext.WORD:
            if t.upper in ("FROM", "JOIN"):
                return True
            if t.upper in ("SELECT", "WHERE", "ON", "SET", "VALUES", "BY", "HAVING"):
                return False
    return False


def rule_repair_response(prompt_text: str, dialect: Dialect) -> List[str]:
    """Pattern-driven fixes for a repair prompt; unknown failures are dropped."""
    items = _parse_repair_case(prompt_text)
    created = set()
    out: List[str] = []
    for stmt, msgs, _sugg in items:
        obj = parse_create(stmt)
        if obj is not None:
            created.add(obj.name.lower())
        if not msgs:
            out.append(stmt)
            continue
        fixed = _fix_statement(stmt, " ".join(msgs), dialect, created, out)
        if fixed is not None:
            out.extend(fixed)
    return out


def _fix_statement(stmt: str, msg: str, dialect: Dialect, created: set, prefix: List[str]) -> Optional[List[str]]:
    for pat in _MISSING_TABLE:
        m = pat.search(msg)
        if m:
            name = m.group(1)
            if name.lower() in created:
                return None
            created.add(name.lower())
            return [f"CREATE TABLE {name} (c0 INT, c1 TEXT);", stmt]
    m = _MISSING_PROC.search(msg)
    if m:
        name = m.group(1)
        return [f"CREATE PROCEDURE {name}() BEGIN SELECT 1; END;", stmt]
    if any(p.search(msg) for p in _AMBIGUOUS):
        fixed = _alias_duplicate_table(stmt)
        return [fixed] if fixed else None
    if _GEOMETRY.search(msg) and dialect.geometry_constructor:
        wkt = (dialect.literals.get("geometry") or ("POINT(0 0)",))[0]
        geo = dialect.geometry_literal(wkt)
        toks = sqltext.tokenize(stmt)
        return ["".join(geo if t.kind == sqltext.STRING else t.text for t in toks)]
    return None
