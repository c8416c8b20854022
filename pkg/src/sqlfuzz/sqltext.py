"""Quote- and comment-aware SQL scanning shared by mutation, repair and reduction.

Nothing here builds a real AST. The scanner produces a flat token list that
keeps every byte of the source, so callers can rewrite or delete token spans
and re-render the statement without disturbing literals or identifiers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

# token kinds
WS = "ws"
COMMENT = "comment"
STRING = "string"
QUOTED = "quoted"  # quoted identifier: "x", `x`, [x]
NUMBER = "number"
WORD = "word"
OP = "op"
PUNCT = "punct"
UNTERMINATED = "unterminated"

_MULTI_OPS = ("->>", "<=>", "!=", "<>", "<=", ">=", "==", "||", "<<", ">>", "::", "->", ":=")
_NUMBER_RE = re.compile(r"(?:0[xX][0-9a-fA-F]+|\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)")
_WORD_RE = re.compile(r"[A-Za-z_\u0080-￿][A-Za-z0-9_$\u0080-￿]*")
_PLACEHOLDER_RE = re.compile(r"\[[A-Za-z_][A-Za-z0-9_\-]*\]")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int

    @property
    def end(self) -> int:
        return self.start + len(self.text)

    @property
    def upper(self) -> str:
        return self.text.upper()

    def is_word(self, *words: str) -> bool:
        return self.kind == WORD and self.text.upper() in words

    @property
    def significant(self) -> bool:
        return self.kind not in (WS, COMMENT)


def tokenize(text: str) -> List[Token]:
    """Split ``text`` into tokens whose concatenation is exactly ``text``."""
    out: List[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            out.append(Token(WS, text[i:j], i))
        elif text.startswith("--", i) or c == "#" and _hash_comment(text, i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            out.append(Token(COMMENT, text[i:j], i))
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                out.append(Token(UNTERMINATED, text[i:], i))
                break
            out.append(Token(COMMENT, text[i : j + 2], i))
            j += 2
        elif c in "'\"`":
            j = _scan_quoted(text, i, c)
            if j < 0:
                out.append(Token(UNTERMINATED, text[i:], i))
                break
            out.append(Token(STRING if c == "'" else QUOTED, text[i:j], i))
        elif c == "[":
            m = _PLACEHOLDER_RE.match(text, i)
            if m:
                j = m.end()
                out.append(Token(QUOTED, text[i:j], i))
            else:
                j = text.find("]", i + 1)
                if j < 0:
                    out.append(Token(PUNCT, c, i))
                    j = i + 1
                else:
                    j += 1
                    out.append(Token(QUOTED, text[i:j], i))
        elif c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            m = _NUMBER_RE.match(text, i)
            j = m.end() if m else i + 1
            out.append(Token(NUMBER, text[i:j], i))
        elif _WORD_RE.match(text, i):
            m = _WORD_RE.match(text, i)
            j = m.end()
            # X'..' blob literal
            if text[i:j] in ("x", "X") and j < n and text[j] == "'":
                k = _scan_quoted(text, j, "'")
                if k > 0:
                    j = k
                    out.append(Token(STRING, text[i:j], i))
                    i = j
                    continue
            out.append(Token(WORD, text[i:j], i))
        else:
            for op in _MULTI_OPS:
                if text.startswith(op, i):
                    j = i + len(op)
                    out.append(Token(OP, op, i))
                    break
            else:
                j = i + 1
                kind = PUNCT if c in "(),;." else OP
                out.append(Token(kind, c, i))
        i = j
    return out


def _hash_comment(text: str, i: int) -> bool:
    # MySQL '#' comments only at line start or after whitespace
    return i == 0 or text[i - 1] in " \t\n"


def _scan_quoted(text: str, i: int, q: str) -> int:
    j = i + 1
    n = len(text)
    while j < n:
        if text[j] == q:
            if j + 1 < n and text[j + 1] == q:
                j += 2
                continue
            return j + 1
        if text[j] == "\\" and q == "'" and j + 1 < n:
            j += 2
            continue
        j += 1
    return -1


def significant(tokens: Iterable[Token]) -> List[Token]:
    return [t for t in tokens if t.significant]


def is_complete(text: str) -> bool:
    """True when ``text`` ends with a fully terminated statement.

    Quotes, comments and BEGIN...END bodies of triggers and procedures must
    all be closed, mirroring what an interactive shell waits for.
    """
    stmts, depth, open_quote = _scan(text)
    if open_quote or depth:
        return False
    sig = significant(tokenize(text))
    return bool(stmts) and sig[-1].text == ";"


def _compound_statement(sig: Sequence[Token]) -> bool:
    words = [t.upper for t in sig[:8] if t.kind == WORD]
    if not words or words[0] != "CREATE":
        return False
    return any(w in ("TRIGGER", "PROCEDURE", "FUNCTION", "EVENT") for w in words[1:6])


_BLOCK_OPENERS = ("IF", "LOOP", "WHILE", "REPEAT")


def _opens_block(sig: Sequence[Token], i: int) -> bool:
    u = sig[i].upper
    prev = sig[i - 1].upper if i > 0 else ""
    nxt = sig[i + 1].text.upper() if i + 1 < len(sig) else ""
    if prev == "END":
        return False
    if u in ("BEGIN", "CASE"):
        return True
    if u in _BLOCK_OPENERS:
        # IF(...) / REPEAT(...) are functions; IF [NOT] EXISTS is DDL
        return nxt not in ("(", "EXISTS", "NOT")
    return False


def _scan(text: str):
    toks = tokenize(text)
    open_quote = any(t.kind == UNTERMINATED for t in toks)
    sig = [t for t in toks if t.significant and t.kind != UNTERMINATED]
    stmts: List[str] = []
    depth = 0
    first = 0  # index into sig of the current statement's first token
    for i, t in enumerate(sig):
        if t.text == ";" and depth == 0:
            if i > first:
                stmts.append(text[sig[first].start : t.end])
            first = i + 1
            continue
        if t.kind == WORD and _compound_statement(sig[first : i + 1]):
            if _opens_block(sig, i):
                depth += 1
            elif t.upper == "END":
                depth = max(depth - 1, 0)
    if first < len(sig):
        stmts.append(text[sig[first].start :].rstrip())
    return stmts, depth, open_quote


def split_statements(text: str) -> List[str]:
    """Split a script into statements, each keeping its trailing ``;``.

    Bodies of CREATE TRIGGER/PROCEDURE/FUNCTION are kept whole. A trailing
    fragment without ``;`` comes back as its own unterminated statement.
    """
    return _scan(text)[0]


def leading_words(text: str, n: int = 2) -> List[str]:
    out = []
    for t in tokenize(text):
        if t.kind == WORD:
            out.append(t.upper)
            if len(out) == n:
                break
        elif t.significant and t.text != "(":
            break
    return out


# --------------------------------------------------------------------------
# statement classification

SCHEMA_NAME_RE = re.compile(r"^[tv]\d+$", re.IGNORECASE)
_CREATE_RE = re.compile(
    r"^\s*CREATE\s+(?:TEMP(?:ORARY)?\s+)?(TABLE|VIEW)\s+(?:IF\s+NOT\s+EXISTS\s+)?"
    r"(?:[`\"\[]?\w+[`\"\]]?\.)?[`\"\[]?(\w+)[`\"\]]?",
    re.IGNORECASE,
)
_INSERT_RE = re.compile(
    r"^\s*INSERT\s+(?:OR\s+\w+\s+)?INTO\s+(?:[`\"\[]?\w+[`\"\]]?\.)?[`\"\[]?(\w+)[`\"\]]?",
    re.IGNORECASE,
)

DEFAULT_FEATURE_KEYWORDS = {
    "GTID": "GTID",
    "GTIDS": "GTID",
    "GTID_PURGED": "GTID",
    "GTID_NEXT": "GTID",
    "PROCEDURE": "PROCEDURE",
    "HISTOGRAM": "HISTOGRAM",
    "INSTALL": "INSTALL",
    "UNINSTALL": "INSTALL",
    "COMPONENT": "COMPONENT",
    "PLUGIN": "PLUGIN",
    "KILL": "KILL",
    "RESET": "RESET",
    "BINLOG": "BINLOG",
    "REPLICA": "REPLICATION",
    "REPLICATION": "REPLICATION",
    "XA": "XA",
    "HANDLER": "HANDLER",
    "VIRTUAL": "VIRTUAL",
    "RTREE": "RTREE",
    "FTS5": "FTS",
    "FTS4": "FTS",
    "FTS3": "FTS",
    "ROWID": "ROWID",
    "SAVEPOINT": "SAVEPOINT",
    "TRIGGER": "TRIGGER",
}

_SELECT_HEADS = {"SELECT", "WITH", "VALUES", "TABLE"}
_DML_HEADS = {"INSERT", "UPDATE", "DELETE", "REPLACE", "UPSERT", "MERGE", "LOAD"}
_DDL_HEADS = {"CREATE", "ALTER", "DROP", "TRUNCATE", "RENAME"}
_ADMIN_HEADS = {
    "PRAGMA", "ANALYZE", "VACUUM", "REINDEX", "SET", "SHOW", "FLUSH", "BEGIN",
    "COMMIT", "ROLLBACK", "SAVEPOINT", "RELEASE", "ATTACH", "DETACH", "EXPLAIN",
    "USE", "OPTIMIZE", "CHECK", "REPAIR", "START", "END", "DESC", "DESCRIBE",
    "GRANT", "REVOKE", "LOCK", "UNLOCK", "CHECKSUM", "CACHE", "PURGE",
}
STATEMENT_KINDS = ("schema_init", "select", "dml", "ddl", "admin", "feature", "other")


def feature_flags(text: str, keywords: Optional[dict] = None) -> frozenset:
    keywords = DEFAULT_FEATURE_KEYWORDS if keywords is None else keywords
    flags = set()
    for t in tokenize(text):
        if t.kind == WORD:
            hit = keywords.get(t.upper)
            if hit is None and keywords is DEFAULT_FEATURE_KEYWORDS and "GTID" in t.upper:
                hit = "GTID"  # gtid_mode, enforce_gtid_consistency, ...
            if hit:
                flags.add(hit)
    return frozenset(flags)


def schema_target(text: str) -> Optional[str]:
    """Name of the convention-named table a CREATE TABLE/VIEW or INSERT targets."""
    m = _CREATE_RE.match(text) or _INSERT_RE.match(text)
    if m is None:
        return None
    name = m.group(m.lastindex)
    return name if SCHEMA_NAME_RE.match(name) else None


def statement_kind(text: str, flags: frozenset = frozenset()) -> str:
    words = leading_words(text, 3)
    if not words:
        return "other"
    head = words[0]
    if head in ("CREATE", "INSERT") and schema_target(text) is not None:
        if head == "INSERT" or (len(words) > 1 and words[1] in ("TABLE", "VIEW", "TEMP", "TEMPORARY")):
            return "schema_init"
    if flags:
        return "feature"
    if head in _SELECT_HEADS:
        return "select"
    if head in _DML_HEADS:
        return "dml"
    if head in _DDL_HEADS:
        return "ddl"
    if head in _ADMIN_HEADS:
        return "admin"
    return "other"


# --------------------------------------------------------------------------
# coarse structural measures

_CLAUSE_WORDS = {"SELECT", "FROM", "WHERE", "HAVING", "LIMIT", "WINDOW", "JOIN", "UNION", "INTERSECT", "EXCEPT"}
_CLAUSE_PAIRS = {("GROUP", "BY"), ("ORDER", "BY")}


def paren_depth_profile(tokens: Sequence[Token]) -> List[int]:
    """Depth of each token (the depth *inside* which it sits)."""
    depth = 0
    out = []
    for t in tokens:
        if t.text == ")":
            depth = max(depth - 1, 0)
        out.append(depth)
        if t.text == "(":
            depth += 1
    return out


def select_depth(text: str) -> int:
    """Coarse AST-depth proxy: subquery nesting level plus top-level clause count."""
    sig = significant(tokenize(text))
    depths = paren_depth_profile(sig)
    max_nest = 0
    stack: List[bool] = []  # whether each open paren started a subquery
    for idx, t in enumerate(sig):
        if t.text == "(":
            nxt = sig[idx + 1] if idx + 1 < len(sig) else None
            stack.append(bool(nxt is not None and nxt.is_word("SELECT", "WITH", "VALUES")))
            max_nest = max(max_nest, sum(stack))
        elif t.text == ")" and stack:
            stack.pop()
    clauses = 0
    for idx, t in enumerate(sig):
        if depths[idx] != 0 or t.kind != WORD:
            continue
        u = t.upper
        if u in _CLAUSE_WORDS:
            clauses += 1
        elif idx + 1 < len(sig) and (u, sig[idx + 1].upper) in _CLAUSE_PAIRS:
            clauses += 1
    return max_nest + clauses


def mask_literals(text: str) -> str:
    """Replace string and numeric literals with ``?`` (for error-message templates)."""
    parts = []
    for t in tokenize(text):
        parts.append("?" if t.kind in (STRING, NUMBER) else t.text)
    return "".join(parts)


def terminate(text: str) -> str:
    """``text`` ending with a ``;`` terminator that no trailing comment swallows."""
    toks = tokenize(text)
    sig = significant(toks)
    if sig and sig[-1].text == ";":
        return text
    if toks and toks[-1].kind == COMMENT:
        return text + "\n;"
    return text + ";"
