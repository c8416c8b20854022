import random
import re
import sqlite3

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlfuzz import sqltext
from sqlfuzz.dialect import UnknownDialect, load_dialect
from sqlfuzz.executor.sqlshell import Session
from sqlfuzz.schema import (
    SchemaConfig,
    SchemaContext,
    generate_schema,
    parse_create,
    register,
    render_context,
)

NAME = re.compile(r"^(t|c|v)\d+$")


def test_two_tables_three_columns():
    stmts, ctx = generate_schema("sqlite", SchemaConfig(tables=(2, 2), columns=(3, 3)), random.Random(0))
    creates = [s for s in stmts if s.startswith("CREATE TABLE")]
    inserts = [s for s in stmts if s.startswith("INSERT")]
    assert len(creates) == 2 and len(inserts) >= 2
    assert list(ctx.objects) == ["t0", "t1"]
    for obj in ctx.tables():
        assert obj.column_names == ["c0", "c1", "c2"]


def test_determinism():
    cfg = SchemaConfig(tables=(1, 1), columns=(1, 1), type_pool=("INT",))
    a = generate_schema("sqlite", cfg, random.Random(5))[0]
    b = generate_schema("sqlite", cfg, random.Random(5))[0]
    assert a == b


def test_unknown_dialect():
    with pytest.raises(UnknownDialect):
        generate_schema("oracle9", SchemaConfig(), random.Random(0))


def test_config_validation():
    for bad in (dict(tables=(0, 1)), dict(columns=(0, 2)), dict(rows=(0, 1)), dict(tables=(3, 1))):
        with pytest.raises(ValueError):
            SchemaConfig(**bad)


def test_geometry_literals_use_constructor():
    d = load_dialect("mysql_subset")
    cfg = SchemaConfig(tables=(2, 2), columns=(3, 3), rows=(2, 2), type_pool=("GEOMETRY", "INT"), null_probability=0)
    seen = 0
    for seed in range(20):
        stmts, ctx = generate_schema(d, cfg, random.Random(seed))
        for obj in ctx.tables():
            geo = [i for i, c in enumerate(obj.columns) if c.data_type.upper() == "GEOMETRY"]
            for ins in [s for s in stmts if s.startswith(f"INSERT INTO {obj.name} ")]:
                values = _values(ins)
                for i in geo:
                    assert values[i].startswith("ST_GeomFromText('"), ins
                    seen += 1
    assert seen > 0


def _values(insert: str):
    body = insert[insert.index("VALUES (") + 8 : insert.rindex(")")]
    parts, depth, cur = [], 0, ""
    for tok in sqltext.tokenize(body):
        if tok.text == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
            continue
        depth += tok.text == "("
        depth -= tok.text == ")"
        cur += tok.text
    parts.append(cur.strip())
    return parts


def test_register_and_drop():
    ctx, changed = register(SchemaContext(), "CREATE TABLE t5 (c0 INT);")
    assert changed and ctx.get("t5").column_names == ["c0"]
    same, changed = register(ctx, "SELECT 1;")
    assert not changed and same is ctx
    ctx2, changed = register(ctx, "DROP TABLE t5;")
    assert changed and ctx2.get("t5") is None
    assert ctx.get("t5") is not None  # register never mutates its input


def test_register_view_procedure_and_alter():
    ctx, _ = register(SchemaContext(), "CREATE TABLE t0 (c0 INT, c1 TEXT)")
    ctx, ok = register(ctx, "CREATE VIEW v0 AS SELECT c0 FROM t0;")
    assert ok and ctx.get("v0").kind == "view"
    ctx, ok = register(ctx, "CREATE PROCEDURE p0() BEGIN SELECT 1; END;")
    assert ok and ctx.get("p0").kind == "procedure"
    ctx, ok = register(ctx, "ALTER TABLE t0 ADD COLUMN c2 REAL;")
    assert ok and ctx.get("t0").column_names == ["c0", "c1", "c2"]


def test_parse_create_columns():
    obj = parse_create("CREATE TABLE t1 (c0 INT PRIMARY KEY, c1 VARCHAR(10) NOT NULL DEFAULT 'x', UNIQUE(c0))")
    assert obj.name == "t1"
    assert [c.name for c in obj.columns] == ["c0", "c1"]
    assert obj.columns[1].data_type.upper() == "VARCHAR(10)"


def test_render_context():
    assert render_context(SchemaContext()) == ""
    stmts, ctx = generate_schema("sqlite", SchemaConfig(tables=(2, 2)), random.Random(3))
    text = render_context(ctx)
    for t in ("t0", "t1"):
        assert text.index(f"CREATE TABLE {t} ") < text.index(f"INSERT INTO {t} ")
    # round trip: splitting the rendered block reproduces the init statements
    assert sqltext.split_statements(text) == ctx.init_statements


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dialect=st.sampled_from(["sqlite", "mysql_subset"]))
def test_schema_invariants(seed, dialect):
    d = load_dialect(dialect)
    stmts, ctx = generate_schema(d, SchemaConfig(views=(0, 1)), random.Random(seed))
    pool = {t.name.upper() for t in d.types}
    created = set()
    for s in stmts:
        m = re.match(r"(CREATE TABLE|CREATE VIEW|INSERT INTO) (\w+)", s)
        assert m, s
        assert NAME.match(m.group(2))
        if m.group(1) == "INSERT INTO":
            assert m.group(2) in created  # definition before use
        else:
            created.add(m.group(2))
    for obj in ctx.tables():
        assert any(s.startswith(f"INSERT INTO {obj.name} ") for s in stmts)
        for c in obj.columns:
            assert c.data_type.upper() in pool
            assert NAME.match(c.name)
    assert ctx.init_statements == stmts


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_sqlite_schemas_execute(seed):
    stmts, _ = generate_schema("sqlite", SchemaConfig(views=(0, 1)), random.Random(seed))
    conn = sqlite3.connect(":memory:")
    for s in stmts:
        conn.execute(s)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mysql_schemas_execute_on_emulator(seed):
    stmts, _ = generate_schema("mysql_subset", SchemaConfig(), random.Random(seed))
    s = Session()
    for q in ("CREATE DATABASE test_db;", "USE test_db;", *stmts):
        s.execute(q)
