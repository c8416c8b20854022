"""Random schema initialisation and the schema context shared with prompting and repair.

Generated objects follow one naming convention -- tables ``t<k>``, views
``v<k>``, columns ``c<k>`` -- so later stages can recover table identity from
statement text with a shallow pattern instead of a parser.
"""

from __future__ import annotations

import logging
import random
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import sqltext
from .dialect import Dialect, TypeSpec, load_dialect

log = logging.getLogger(__name__)

__all__ = [
    "ColumnDef",
    "SchemaObject",
    "SchemaContext",
    "SchemaConfig",
    "generate_schema",
    "register",
    "render_context",
    "parse_create",
    "literal_for",
]

CONSTRAINTS = ("not-null", "unique", "primary-key", "default")


@dataclass(frozen=True)
class ColumnDef:
    name: str
    data_type: str
    constraints: Tuple[str, ...] = ()
    default: Optional[str] = None

    def render(self) -> str:
        parts = [self.name, self.data_type] if self.data_type else [self.name]
        for c in self.constraints:
            if c == "primary-key":
                parts.append("PRIMARY KEY")
            elif c == "unique":
                parts.append("UNIQUE")
            elif c == "not-null":
                parts.append("NOT NULL")
            elif c == "default":
                parts.append(f"DEFAULT {self.default}")
        return " ".join(parts)


@dataclass(frozen=True)
class SchemaObject:
    name: str
    kind: str  # table | view | procedure
    columns: Tuple[ColumnDef, ...]
    create_text: str

    @property
    def column_names(self) -> List[str]:
        return [c.name for c in self.columns]


@dataclass
class SchemaContext:
    objects: "OrderedDict[str, SchemaObject]" = field(default_factory=OrderedDict)
    init_statements: List[str] = field(default_factory=list)

    def copy(self) -> "SchemaContext":
        return SchemaContext(OrderedDict(self.objects), list(self.init_statements))

    def tables(self) -> List[SchemaObject]:
        return [o for o in self.objects.values() if o.kind == "table"]

    def get(self, name: str) -> Optional[SchemaObject]:
        for k, v in self.objects.items():
            if k.lower() == name.lower():
                return v
        return None

    def next_name(self, prefix: str) -> str:
        used = {int(m.group(1)) for k in self.objects for m in [re.match(rf"^{prefix}(\d+)$", k)] if m}
        k = 0
        while k in used:
            k += 1
        return f"{prefix}{k}"


@dataclass(frozen=True)
class SchemaConfig:
    tables: Tuple[int, int] = (1, 3)
    columns: Tuple[int, int] = (2, 5)
    rows: Tuple[int, int] = (1, 3)
    views: Tuple[int, int] = (0, 0)
    constraint_probability: float = 0.3
    null_probability: float = 0.05
    type_pool: Optional[Tuple[str, ...]] = None  # subset of the dialect pool; None = all

    def __post_init__(self):
        for lo, hi in (self.tables, self.columns, self.rows, self.views):
            if lo > hi or lo < 0:
                raise ValueError("count ranges must satisfy 0 <= lo <= hi")
        if self.tables[0] < 1 or self.columns[0] < 1:
            raise ValueError("at least one table with one column is required")
        if self.rows[0] < 1:
            raise ValueError("every table needs at least one row")


# --------------------------------------------------------------------------
# literals

_WKT_FALLBACK = ("POINT(0 0)",)


def literal_for(spec: TypeSpec, dialect: Dialect, rng: random.Random, exclude: Sequence[str] = ()) -> str:
    """A type-compatible literal; avoids values in ``exclude`` when the pool allows."""
    if spec.literal == "enum":
        pool = spec.enum_values or ["''"]
    elif spec.literal == "geometry":
        wkts = dialect.literals.get("geometry", _WKT_FALLBACK)
        pool = [dialect.geometry_literal(w) for w in wkts]
    else:
        pool = list(dialect.literals.get(spec.literal, ()))
        if not pool:
            raise ValueError(f"dialect {dialect.name} has no literals of class {spec.literal!r}")
    fresh = [p for p in pool if p not in exclude]
    if fresh:
        return rng.choice(fresh)
    # distinct values needed beyond the pool: synthesise one
    n = len(exclude)
    if spec.literal in ("int", "real", "numeric"):
        return str(1000 + n)
    if spec.literal in ("text", "json", "enum"):
        return f"'v{n}'"
    if spec.literal in ("blob", "binary"):
        return f"X'{n:02x}'"
    return rng.choice(pool)


def _pick_type(dialect: Dialect, cfg: SchemaConfig, rng: random.Random) -> TypeSpec:
    if cfg.type_pool is None:
        return rng.choice(dialect.types)
    specs = [dialect.type_spec(n) for n in cfg.type_pool]
    missing = [n for n, s in zip(cfg.type_pool, specs) if s is None]
    if missing:
        raise ValueError(f"types {missing} are not in the {dialect.name} pool")
    return rng.choice(specs)


def _make_column(idx: int, spec: TypeSpec, dialect: Dialect, cfg: SchemaConfig, rng: random.Random, pk_taken: bool):
    cons: List[str] = []
    default = None
    if rng.random() < cfg.constraint_probability:
        options = ["not-null"]
        if spec.keyable:
            options.append("unique")
            if not pk_taken:
                options.append("primary-key")
        if spec.defaultable:
            options.append("default")
        pick = rng.choice(options)
        cons.append(pick)
        if pick == "default":
            default = literal_for(spec, dialect, rng)
    return ColumnDef(f"c{idx}", spec.name, tuple(cons), default)


def generate_schema(dialect, config: Optional[SchemaConfig] = None, rng: Optional[random.Random] = None):
    """Random CREATE TABLE / INSERT statements plus the matching context.

    Returns ``(statements, context)``. Unique and primary-key columns receive
    distinct values across rows; not-null columns never receive NULL.
    """
    d = dialect if isinstance(dialect, Dialect) else load_dialect(dialect)
    cfg = config or SchemaConfig()
    rng = rng or random.Random()
    ctx = SchemaContext()
    stmts: List[str] = []
    n_tables = rng.randint(*cfg.tables)
    for ti in range(n_tables):
        tname = f"t{ti}"
        cols = []
        pk_taken = False
        for ci in range(rng.randint(*cfg.columns)):
            col = _make_column(ci, _pick_type(d, cfg, rng), d, cfg, rng, pk_taken)
            pk_taken = pk_taken or "primary-key" in col.constraints
            cols.append(col)
        create = f"CREATE TABLE {tname} ({', '.join(c.render() for c in cols)});"
        ctx.objects[tname] = SchemaObject(tname, "table", tuple(cols), create)
        stmts.append(create)
        used: Dict[str, List[str]] = {c.name: [] for c in cols}
        for _ in range(rng.randint(*cfg.rows)):
            values = []
            for c in cols:
                spec = d.type_spec(c.data_type)
                distinct = "unique" in c.constraints or "primary-key" in c.constraints
                nullable = not distinct and "not-null" not in c.constraints
                if nullable and rng.random() < cfg.null_probability:
                    values.append("NULL")
                    continue
                v = literal_for(spec, d, rng, used[c.name] if distinct else ())
                used[c.name].append(v)
                values.append(v)
            stmts.append(f"INSERT INTO {tname} VALUES ({', '.join(values)});")
    for vi in range(rng.randint(*cfg.views)):
        base = rng.choice(ctx.tables())
        cols = base.columns[: rng.randint(1, len(base.columns))]
        text = f"CREATE VIEW v{vi} AS SELECT {', '.join(c.name for c in cols)} FROM {base.name};"
        ctx.objects[f"v{vi}"] = SchemaObject(f"v{vi}", "view", tuple(ColumnDef(c.name, "") for c in cols), text)
        stmts.append(text)
    ctx.init_statements = list(stmts)
    return stmts, ctx


# --------------------------------------------------------------------------
# shallow DDL recognition

_CREATE_HEAD = re.compile(
    r"^\s*CREATE\s+(?:OR\s+REPLACE\s+)?(?:TEMP(?:ORARY)?\s+)?(?:DEFINER\s*=\s*\S+\s+)?"
    r"(TABLE|VIEW|PROCEDURE)\s+(?:IF\s+NOT\s+EXISTS\s+)?(?:[`\"\[]?\w+[`\"\]]?\.)?[`\"\[]?(\w+)[`\"\]]?",
    re.IGNORECASE,
)
_DROP_HEAD = re.compile(
    r"^\s*DROP\s+(?:TEMP(?:ORARY)?\s+)?(TABLE|VIEW|PROCEDURE)\s+(?:IF\s+EXISTS\s+)?(.+?);?\s*$",
    re.IGNORECASE | re.DOTALL,
)
_ALTER_ADD = re.compile(
    r"^\s*ALTER\s+TABLE\s+[`\"\[]?(\w+)[`\"\]]?\s+ADD\s+(?:COLUMN\s+)?[`\"\[]?(\w+)[`\"\]]?\s*([^,;]*)",
    re.IGNORECASE,
)
_TABLE_CONSTRAINT_HEADS = {"PRIMARY", "UNIQUE", "CHECK", "FOREIGN", "CONSTRAINT", "KEY", "INDEX", "FULLTEXT", "SPATIAL"}
_COLUMN_CONSTRAINT_HEADS = {
    "PRIMARY", "UNIQUE", "NOT", "NULL", "DEFAULT", "CHECK", "REFERENCES", "COLLATE",
    "GENERATED", "AS", "AUTO_INCREMENT", "AUTOINCREMENT", "COMMENT", "CONSTRAINT", "ON",
}


def _split_top_level(body: str) -> List[str]:
    parts, depth, start = [], 0, 0
    toks = sqltext.tokenize(body)
    for t in toks:
        if t.text == "(":
            depth += 1
        elif t.text == ")":
            depth -= 1
        elif t.text == "," and depth == 0:
            parts.append(body[start : t.start])
            start = t.end
    parts.append(body[start:])
    return [p.strip() for p in parts if p.strip()]


def _parse_column(text: str) -> Optional[ColumnDef]:
    sig = sqltext.significant(sqltext.tokenize(text))
    if not sig or sig[0].upper in _TABLE_CONSTRAINT_HEADS:
        return None
    name = sig[0].text.strip('`"[]')
    type_end = len(text)
    cons: List[str] = []
    default = None
    for i, t in enumerate(sig[1:], start=1):
        if t.kind == sqltext.WORD and t.upper in _COLUMN_CONSTRAINT_HEADS:
            type_end = min(type_end, t.start)
            if t.upper == "PRIMARY":
                cons.append("primary-key")
            elif t.upper == "UNIQUE":
                cons.append("unique")
            elif t.upper == "NOT" and i + 1 < len(sig) and sig[i + 1].upper == "NULL":
                cons.append("not-null")
            elif t.upper == "DEFAULT" and i + 1 < len(sig):
                cons.append("default")
                default = sig[i + 1].text
    dtype = text[sig[0].end : type_end].strip() if len(sig) > 1 else ""
    return ColumnDef(name, dtype, tuple(cons), default)


def parse_create(text: str) -> Optional[SchemaObject]:
    """Recognise CREATE TABLE/VIEW/PROCEDURE; ``None`` for anything else."""
    m = _CREATE_HEAD.match(text)
    if not m:
        return None
    kind, name = m.group(1).lower(), m.group(2)
    rest = text[m.end() :]
    cols: Tuple[ColumnDef, ...] = ()
    if kind == "table":
        sig = sqltext.significant(sqltext.tokenize(rest))
        if sig and sig[0].text == "(":
            depth = 0
            for t in sig:
                if t.text == "(":
                    depth += 1
                elif t.text == ")":
                    depth -= 1
                    if depth == 0:
                        body = rest[sig[0].end : t.start]
                        cols = tuple(c for c in map(_parse_column, _split_top_level(body)) if c)
                        break
    elif kind == "view":
        sig = sqltext.significant(sqltext.tokenize(rest))
        if sig and sig[0].text == "(":
            close = next((t for t in sig if t.text == ")"), None)
            if close is not None:
                names = _split_top_level(rest[sig[0].end : close.start])
                cols = tuple(ColumnDef(n.strip('`"[]'), "") for n in names)
    return SchemaObject(name, kind, cols, text.strip())


def register(context: SchemaContext, statement: str) -> Tuple[SchemaContext, bool]:
    """Fold one DDL statement into a copy of ``context``.

    Returns ``(new_context, changed)``; unrecognised statements come back with
    ``changed=False`` and the context untouched.
    """
    text = statement.strip()
    obj = parse_create(text)
    if obj is not None:
        ctx = context.copy()
        if ctx.get(obj.name) is None:
            ctx.objects[obj.name] = obj
            ctx.init_statements.append(text if text.endswith(";") else text + ";")
            return ctx, True
        return context, False
    m = _DROP_HEAD.match(text)
    if m:
        names = [n.strip().strip('`"[]').split(".")[-1] for n in m.group(2).split(",")]
        ctx = context.copy()
        changed = False
        for n in names:
            existing = ctx.get(n)
            if existing is None:
                continue
            del ctx.objects[existing.name]
            ctx.init_statements = [s for s in ctx.init_statements if sqltext.schema_target(s) != existing.name
                                   and (parse_create(s) or SchemaObject("", "", (), "")).name != existing.name]
            changed = True
        return (ctx, True) if changed else (context, False)
    m = _ALTER_ADD.match(text)
    if m:
        existing = context.get(m.group(1))
        if existing is None or existing.kind != "table":
            return context, False
        col = _parse_column(f"{m.group(2)} {m.group(3)}")
        if col is None or col.name in existing.column_names:
            return context, False
        ctx = context.copy()
        ctx.objects[existing.name] = SchemaObject(
            existing.name, existing.kind, existing.columns + (col,), existing.create_text
        )
        ctx.init_statements.append(text if text.endswith(";") else text + ";")
        return ctx, True
    return context, False


def render_context(context: SchemaContext) -> str:
    """The init statements, one per line, in emission order."""
    return "\n".join(context.init_statements)
