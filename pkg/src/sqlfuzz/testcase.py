"""Statements and multi-statement test cases."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from . import sqltext


@dataclass(frozen=True)
class Statement:
    """One SQL statement with its coarse classification.

    ``kind`` and ``feature_flags`` are derived from the text when not given.
    """

    text: str
    kind: str = ""
    feature_flags: frozenset = frozenset()

    def __post_init__(self):
        text = self.text.strip()
        object.__setattr__(self, "text", text)
        flags = self.feature_flags or sqltext.feature_flags(text)
        object.__setattr__(self, "feature_flags", frozenset(flags))
        if not self.kind:
            object.__setattr__(self, "kind", sqltext.statement_kind(text, self.feature_flags))
        elif self.kind not in sqltext.STATEMENT_KINDS:
            raise ValueError(f"unknown statement kind {self.kind!r}")

    @classmethod
    def of(cls, text: str) -> "Statement":
        return cls(text)

    def with_text(self, text: str) -> "Statement":
        """A freshly classified statement carrying ``text``."""
        return Statement(text)

    @property
    def terminated(self) -> str:
        """Text guaranteed to end with a statement terminator."""
        return self.text if self.text.rstrip().endswith(";") else self.text + ";"


def statements(texts: Iterable[str]) -> List[Statement]:
    return [Statement(t) for t in texts if t and t.strip()]


@dataclass(frozen=True)
class TestCase:
    """A schema part (CREATE/INSERT of convention-named objects) plus operations."""

    __test__ = False  # not a pytest class

    schema_part: Tuple[Statement, ...] = ()
    op_part: Tuple[Statement, ...] = ()
    lineage: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "schema_part", tuple(self.schema_part))
        object.__setattr__(self, "op_part", tuple(self.op_part))
        object.__setattr__(self, "lineage", tuple(self.lineage))
        for s in self.schema_part:
            if s.kind != "schema_init":
                raise ValueError(f"non-schema statement in schema part: {s.text!r}")
        for s in self.op_part:
            if s.kind == "schema_init":
                raise ValueError(f"schema statement in operation part: {s.text!r}")

    @classmethod
    def from_statements(cls, stmts: Iterable, lineage: Sequence[str] = ()) -> "TestCase":
        """Partition statements (text or Statement) into schema and operation parts.

        Relative order inside each part is kept.
        """
        schema, ops = [], []
        for s in stmts:
            st = s if isinstance(s, Statement) else Statement(s)
            if not st.text:
                continue
            (schema if st.kind == "schema_init" else ops).append(st)
        return cls(tuple(schema), tuple(ops), tuple(lineage))

    @classmethod
    def from_sql(cls, script: str) -> "TestCase":
        return cls.from_statements(sqltext.split_statements(script))

    @property
    def statements(self) -> List[Statement]:
        return list(self.schema_part) + list(self.op_part)

    @property
    def texts(self) -> List[str]:
        return [s.text for s in self.statements]

    def __len__(self) -> int:
        return len(self.schema_part) + len(self.op_part)

    @property
    def case_id(self) -> str:
        h = hashlib.sha1("\n".join(self.texts).encode("utf-8")).hexdigest()
        return h[:16]

    def to_sql(self) -> str:
        return "\n".join(s.terminated for s in self.statements) + ("\n" if len(self) else "")

    def replace_statements(self, stmts: Iterable, lineage: Optional[Sequence[str]] = None) -> "TestCase":
        return TestCase.from_statements(stmts, self.lineage if lineage is None else lineage)
