import json
import random
import sqlite3
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlfuzz.grammar import SqlTemplate
from sqlfuzz.llm import (
    REPAIR_CLOSE,
    REPAIR_OPEN,
    EmptyTemplates,
    EndpointError,
    HttpChatClient,
    IndexOutOfRange,
    MockClient,
    ModelParams,
    NoJsonArray,
    Prompt,
    PromptKind,
    Timeout,
    TransportError,
    UnreachableClient,
    build_instantiation_prompt,
    build_repair_prompt,
    parse_sql_array,
)
from sqlfuzz.repair import ErrorCategory, ErrorRecord
from sqlfuzz.schema import SchemaConfig, SchemaContext, generate_schema, register


def _ctx(*stmts):
    ctx = SchemaContext()
    for s in stmts:
        ctx, _ = register(ctx, s)
    return ctx


def _err(i, msg, suggestion=None):
    return ErrorRecord(i, None, msg, ErrorCategory.InvalidObjectReference, suggestion)


# -- params -------------------------------------------------------------------

def test_params_defaults_and_validation():
    p = ModelParams()
    assert p.temperature == 0.4 and p.max_context_tokens == 8192 and p.concurrency == 4
    for bad in (dict(temperature=2.5), dict(temperature=-0.1), dict(max_context_tokens=0), dict(concurrency=0)):
        with pytest.raises(ValueError):
            ModelParams(**bad)


# -- instantiation prompts ----------------------------------------------------

def test_instantiation_prompt_contents():
    ctx = _ctx("CREATE TABLE t0 (c0 INT, c1 TEXT);")
    p = build_instantiation_prompt(ctx, [SqlTemplate("SELECT [columnName] FROM [tableName]")], "sqlite")
    assert p.kind is PromptKind.Instantiation and p.target_dialect == "sqlite"
    assert "CREATE TABLE t0 (c0 INT, c1 TEXT);" in p.text
    assert "SELECT [columnName] FROM [tableName]" in p.text
    assert "executable in SQLite" in p.text
    assert p.text.rstrip().endswith('["SQL1;", "SQL2;", ...]')


def test_instantiation_prompt_empty_context_and_purity():
    p1 = build_instantiation_prompt(SchemaContext(), ["COMMIT"], "mysql_subset")
    p2 = build_instantiation_prompt(SchemaContext(), ["COMMIT"], "mysql_subset")
    assert p1.text == p2.text
    assert "```sql\n\n```" in p1.text
    assert "executable in MySQL" in p1.text
    with pytest.raises(EmptyTemplates):
        build_instantiation_prompt(SchemaContext(), [], "sqlite")


def test_instantiation_prompt_truncates_oldest_inserts_first():
    stmts, ctx = generate_schema("sqlite", SchemaConfig(tables=(3, 3), rows=(3, 3)), random.Random(1))
    full = build_instantiation_prompt(ctx, ["SELECT 1"], "sqlite")
    budget_tokens = (len(full.text) - 60) // 4
    cut = build_instantiation_prompt(ctx, ["SELECT 1"], "sqlite", max_context_tokens=budget_tokens)
    assert len(cut.text) < len(full.text)
    for s in stmts:
        if s.startswith("CREATE"):
            assert s in cut.text
    inserts = [s for s in stmts if s.startswith("INSERT")]
    assert inserts[0] not in cut.text and inserts[-1] in cut.text


# -- repair prompts ------------------------------------------------------------

CASE = ["CREATE TABLE t0 (c0 INT);", "INSERT INTO t0 VALUES (1);", "SELECT * FROM t0;", "SELECT * FROM t9;"]


def _blocks(text):
    # only the embedded test case; the skeleton's format description has a block too
    case = text.split("Here is the input test case:\n```sql\n", 1)[1].split("```", 1)[0]
    lines = case.splitlines()
    out, cur = [], None
    for ln in lines:
        if ln == REPAIR_OPEN:
            assert cur is None, "nested marker block"
            cur = []
        elif ln == REPAIR_CLOSE:
            out.append(cur)
            cur = None
        elif cur is not None:
            cur.append(ln)
    assert cur is None
    return out


def test_repair_prompt_single_block():
    p = build_repair_prompt(CASE, [_err(3, "no such table: t9")], "sqlite")
    assert p.kind is PromptKind.Repair
    blocks = _blocks(p.text)
    assert blocks == [["SELECT * FROM t9;", "-- no such table: t9"]]


def test_repair_prompt_two_blocks_in_order_and_suggestion():
    p = build_repair_prompt(CASE, [_err(3, "no such table: t9", "create table t9 first"), _err(1, "bad insert")], "sqlite")
    blocks = _blocks(p.text)
    assert blocks[0][0] == "INSERT INTO t0 VALUES (1);"
    assert blocks[1] == ["SELECT * FROM t9;", "-- no such table: t9", "-- (create table t9 first)"]


def test_repair_prompt_errors():
    with pytest.raises(IndexOutOfRange):
        build_repair_prompt(CASE, [_err(4, "x")], "sqlite")
    with pytest.raises(ValueError):
        build_repair_prompt(CASE, [], "sqlite")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, len(CASE) - 1), min_size=1, max_size=6))
def test_repair_markers_never_nest_or_split(indices):
    p = build_repair_prompt(CASE, [_err(i, f"error {i}") for i in indices], "sqlite")
    blocks = _blocks(p.text)
    assert len(blocks) == len(set(indices))
    for b, i in zip(blocks, sorted(set(indices))):
        assert b[0] == CASE[i]  # the whole statement sits inside its block
        assert all(ln.startswith("-- ") for ln in b[1:])


# -- response parsing ------------------------------------------------------------

def test_parse_examples():
    assert parse_sql_array('["SELECT 1;", "COMMIT;"]') == ["SELECT 1;", "COMMIT;"]
    assert parse_sql_array('Sure! Here:\n```json\n["SELECT 1;"]\n```\nEnjoy [1]') == ["SELECT 1;"]
    assert parse_sql_array('[1, 2] then ["  A;  ", "", "B;"]') == ["A;", "B;"]
    with pytest.raises(NoJsonArray):
        parse_sql_array("Sorry, I cannot help with that.")


_prose = st.text(alphabet=st.characters(blacklist_characters="[]\"\\", blacklist_categories=("Cs",)), max_size=40)
_sql = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30).filter(lambda s: s.strip())


@settings(max_examples=1000, deadline=None)
@given(pre=_prose, post=_prose, items=st.lists(_sql, max_size=6), fence=st.booleans())
def test_parse_random_wrappings(pre, post, items, fence):
    arr = json.dumps(items)
    body = f"```json\n{arr}\n```" if fence else arr
    assert parse_sql_array(pre + body + post) == [s.strip() for s in items if s.strip()]


# -- clients -----------------------------------------------------------------------

def test_mock_scripted():
    m = MockClient({"instantiation": ["SELECT 1;"]})
    p = build_instantiation_prompt(SchemaContext(), ["COMMIT"], "sqlite")
    assert m.complete(p) == "SELECT 1;"
    assert m.order_sensitive and m.mode == "scripted" and m.calls == 1


def test_mock_scripted_sequence_and_matchers(tmp_path):
    script = {
        "repair": [
            {"match": "no such table: t9", "responses": [["CREATE TABLE t9 (c0 INT);", "SELECT 1;"]]},
            {"match": None, "responses": ["[\"A;\"]", "[\"B;\"]"]},
        ]
    }
    path = tmp_path / "s.json"
    path.write_text(json.dumps(script))
    m = MockClient(path)
    hit = build_repair_prompt(CASE, [_err(3, "no such table: t9")], "sqlite")
    other = build_repair_prompt(CASE, [_err(1, "something else")], "sqlite")
    assert parse_sql_array(m.complete(hit)) == ["CREATE TABLE t9 (c0 INT);", "SELECT 1;"]
    assert m.complete(other) == '["A;"]'
    assert m.complete(other) == '["B;"]'
    assert m.complete(other) == '["B;"]'  # the last response repeats
    assert m.calls_of(PromptKind.Repair) == 4


def test_mock_rules_fill_alter_table_executes():
    ctx = _ctx("CREATE TABLE t0 (c0 INT, c1 TEXT);")
    p = build_instantiation_prompt(ctx, ["ALTER TABLE [tableName] [alterSpecification]"], "sqlite")
    m = MockClient()
    assert not m.order_sensitive and m.mode == "rules"
    out = parse_sql_array(m.complete(p))
    assert out == ["ALTER TABLE t0 ADD COLUMN c2 INT;"]
    conn = sqlite3.connect(":memory:")
    conn.execute("CREATE TABLE t0 (c0 INT, c1 TEXT)")
    conn.execute(out[0])
    assert [r[1] for r in conn.execute("PRAGMA table_info(t0)")] == ["c0", "c1", "c2"]
    assert m.complete(p) == m.complete(p)  # pure function of the prompt


def test_mock_rules_leave_no_placeholders():
    ctx = _ctx("CREATE TABLE t0 (c0 INT, c1 TEXT);")
    p = build_instantiation_prompt(
        ctx, ["SELECT [columnName] FROM [tableName] WHERE [expr]", "CREATE INDEX [indexName] ON [tableName] ([columnName])"],
        "sqlite",
    )
    out = parse_sql_array(MockClient().complete(p))
    assert len(out) == 2 and not any("[" in s for s in out)
    conn = sqlite3.connect(":memory:")
    conn.execute("CREATE TABLE t0 (c0 INT, c1 TEXT)")
    for s in out:
        conn.execute(s)


def test_unreachable_client():
    c = UnreachableClient()
    with pytest.raises(TransportError):
        c.complete(Prompt(PromptKind.Instantiation, "x", "sqlite"), ModelParams())
    assert c.calls == 1


class _Handler(BaseHTTPRequestHandler):
    mode = "ok"
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        if self.mode == "ok":
            payload = json.dumps({"choices": [{"message": {"content": '["SELECT 1;"]'}}]}).encode()
            self.send_response(200)
        elif self.mode == "shape":
            payload = b'{"nothing": 1}'
            self.send_response(200)
        elif self.mode == "slow":
            import time

            time.sleep(1.0)
            payload = b"{}"
            self.send_response(200)
        else:
            payload = b"overloaded"
            self.send_response(503)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        try:
            self.wfile.write(payload)
        except OSError:
            pass

    def log_message(self, *a):
        pass


@pytest.fixture
def endpoint():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/chat/completions"
    srv.shutdown()
    srv.server_close()


def test_http_client_roundtrip_and_errors(endpoint):
    prompt = Prompt(PromptKind.Instantiation, "hello", "sqlite")
    c = HttpChatClient(endpoint, "m1", api_key="k")
    _Handler.mode = "ok"
    _Handler.seen.clear()
    assert c.complete(prompt, ModelParams(temperature=0.7)) == '["SELECT 1;"]'
    body, auth = _Handler.seen[-1]
    assert body == {"model": "m1", "messages": [{"role": "user", "content": "hello"}], "temperature": 0.7}
    assert auth == "Bearer k"
    _Handler.mode = "fail"
    with pytest.raises(EndpointError) as ei:
        c.complete(prompt, ModelParams())
    assert ei.value.status == 503
    _Handler.mode = "shape"
    with pytest.raises(EndpointError):
        c.complete(prompt, ModelParams())
    _Handler.mode = "slow"
    with pytest.raises(Timeout):
        c.complete(prompt, ModelParams(request_timeout=0.2))


def test_http_client_transport_error():
    c = HttpChatClient("http://127.0.0.1:9/v1/chat/completions")
    with pytest.raises(TransportError):
        c.complete(Prompt(PromptKind.Repair, "x", "sqlite"), ModelParams(request_timeout=2))
