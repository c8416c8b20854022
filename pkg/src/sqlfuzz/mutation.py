"""Crossover mutation of two test cases with logic-shifting rewrites.

``mutate`` composes four steps on parents T1 = S1 + O1 and T2 = S2 + O2:

1. schema unification -- one definition group per table, a random parent's
   version when both define it;
2. crossover -- a random interleaving of O1 and O2 that keeps each parent's
   order;
3. drop filtering -- each operation dropped with a fresh p ~ U(low, high);
4. logic shifting -- token-level rewrites of predicates, ordering directions
   and join variants, restricted to what the dialect accepts.
"""

from __future__ import annotations

import functools
import logging
import random
import sys
from collections import OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from . import sqltext
from .testcase import Statement, TestCase

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = [
    "RewriteRule",
    "RewriteSite",
    "MutationConfig",
    "load_rewrite_rules",
    "unify_schemas",
    "crossover",
    "drop_filter",
    "find_sites",
    "logic_shift",
    "mutate",
]

ALL_DIALECTS = "*"


@dataclass(frozen=True)
class RewriteRule:
    """``from_token`` -> one of ``to_tokens``; ``dialect_mask[k]`` lists where k is legal."""

    from_token: str
    to_tokens: Tuple[str, ...]
    category: str  # predicate | join
    dialect_mask: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    clauses: FrozenSet[str] = frozenset()

    def __post_init__(self):
        if self.category not in ("predicate", "join"):
            raise ValueError(f"unknown rewrite category {self.category!r}")
        if any(t == self.from_token for t in self.to_tokens):
            raise ValueError(f"rewrite of {self.from_token!r} onto itself")

    def legal(self, replacement: str, dialect: str) -> bool:
        mask = self.dialect_mask.get(replacement)
        return mask is None or ALL_DIALECTS in mask or dialect in mask

    def choices(self, dialect: str) -> List[str]:
        return [t for t in self.to_tokens if self.legal(t, dialect)]

    @property
    def words(self) -> Tuple[str, ...]:
        return tuple(self.from_token.split())


@dataclass(frozen=True)
class MutationConfig:
    crossover_bias: float = 0.5
    drop_low: float = 0.2
    drop_high: float = 0.4
    rewrite_probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.drop_low <= self.drop_high <= 1.0:
            raise ValueError("need 0 <= drop_low <= drop_high <= 1")
        for v in (self.crossover_bias, self.rewrite_probability):
            if not 0.0 <= v <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


# --------------------------------------------------------------------------
# rule loading

def _rules_from_mapping(data: Mapping) -> Tuple[RewriteRule, ...]:
    rules: List[RewriteRule] = []
    for p in data.get("predicate", []):
        mask = frozenset(p.get("dialects", [ALL_DIALECTS]))
        to = tuple(t.upper() for t in p["to"])
        rules.append(
            RewriteRule(
                p["from"].upper(), to, "predicate", {t: mask for t in to}, frozenset(c.upper() for c in p["clauses"])
            )
        )
    joins = {k.upper(): frozenset(v) for k, v in data.get("joins", {}).items()}
    for phrase in joins:
        others = tuple(j for j in joins if j != phrase)
        rules.append(RewriteRule(phrase, others, "join", {j: joins[j] for j in others}, frozenset({"FROM"})))
    for phrase in data.get("fixed_joins", {}).get("phrases", []):
        rules.append(RewriteRule(phrase.upper(), (), "join", {}, frozenset({"FROM"})))
    return tuple(rules)


@functools.lru_cache(maxsize=None)
def load_rewrite_rules(path: Optional[str] = None) -> Tuple[RewriteRule, ...]:
    """Bundled rule set, or the rule file at ``path``."""
    if path is None:
        with (resources.files("sqlfuzz.data.rewrites") / "rules.toml").open("rb") as fh:
            return _rules_from_mapping(tomllib.load(fh))
    with open(path, "rb") as fh:
        return _rules_from_mapping(tomllib.load(fh))


# --------------------------------------------------------------------------
# schema unification and crossover

def _groups(schema: Sequence[Statement]) -> "OrderedDict[object, List[Statement]]":
    groups: "OrderedDict[object, List[Statement]]" = OrderedDict()
    for i, s in enumerate(schema):
        key = sqltext.schema_target(s.text)
        if key is None:
            log.debug("schema statement without a recognisable target kept verbatim: %r", s.text[:60])
            key = ("verbatim", id(schema), i)
        else:
            key = key.lower()
        groups.setdefault(key, []).append(s)
    return groups


def unify_schemas(s1: Sequence[Statement], s2: Sequence[Statement], rng: random.Random) -> List[Statement]:
    """One definition group per table; shared tables take a random parent's group."""
    g1, g2 = _groups(s1), _groups(s2)
    order = list(g1)
    last = -1
    for key in g2:
        if key in g1:
            last = order.index(key)
        else:
            order.insert(last + 1, key)
            last += 1
    out: List[Statement] = []
    for key in order:
        if key in g1 and key in g2:
            out.extend(g1[key] if rng.random() < 0.5 else g2[key])
        else:
            out.extend(g1.get(key) or g2[key])
    return out


def crossover(o1: Sequence, o2: Sequence, config: MutationConfig, rng: random.Random) -> List:
    """Random interleaving of ``o1`` and ``o2`` that preserves each one's order."""
    i = j = 0
    out = []
    while i < len(o1) and j < len(o2):
        if rng.random() < config.crossover_bias:
            out.append(o1[i])
            i += 1
        else:
            out.append(o2[j])
            j += 1
    out.extend(o1[i:])
    out.extend(o2[j:])
    return out


def drop_filter(ops: Sequence, config: MutationConfig, rng: random.Random) -> List:
    """Drop each element with its own p ~ U(low, high); never returns empty for non-empty input."""
    kept = []
    for s in ops:
        p = rng.uniform(config.drop_low, config.drop_high)
        if not rng.random() < p:
            kept.append(s)
    if ops and not kept:
        kept = [rng.choice(list(ops))]
    return kept


# --------------------------------------------------------------------------
# logic shifting

@dataclass(frozen=True)
class RewriteSite:
    start: int  # char offsets of the matched phrase in the statement
    end: int
    rule: RewriteRule


_CLAUSE_STARTERS = {
    "SELECT": "SELECT", "FROM": "FROM", "WHERE": "WHERE", "HAVING": "HAVING", "LIMIT": "LIMIT",
    "ON": "ON", "USING": "USING", "SET": "SET", "VALUES": "VALUES", "WINDOW": "WINDOW",
    "RETURNING": "RETURNING", "UNION": "SELECT", "INTERSECT": "SELECT", "EXCEPT": "SELECT",
    "INSERT": "OTHER", "UPDATE": "OTHER", "DELETE": "OTHER", "CREATE": "OTHER", "WHEN": "WHEN",
    "THEN": "OTHER", "ELSE": "OTHER", "CASE": "OTHER", "OVER": "OTHER", "PARTITION": "OTHER",
}
_PAIR_CLAUSES = {("ORDER", "BY"): "ORDER BY", ("GROUP", "BY"): "GROUP BY"}


def _clause_map(sig: List[sqltext.Token]) -> List[str]:
    """Clause each significant token belongs to, tracked per parenthesis level.

    A parenthesis opening a subquery starts fresh; other parentheses inherit
    the enclosing clause (``WHERE (a = 1)`` stays in WHERE).
    """
    stack = ["OTHER"]
    between_pending: List[int] = [0]
    out: List[str] = []
    for i, t in enumerate(sig):
        if t.text == "(":
            out.append(stack[-1])
            stack.append(stack[-1])
            between_pending.append(0)
            continue
        if t.text == ")":
            if len(stack) > 1:
                stack.pop()
                between_pending.pop()
            out.append(stack[-1])
            continue
        if t.kind == sqltext.WORD:
            u = t.upper
            nxt = sig[i + 1].upper if i + 1 < len(sig) else ""
            if (u, nxt) in _PAIR_CLAUSES:
                stack[-1] = _PAIR_CLAUSES[(u, nxt)]
            elif u == "JOIN" or (u in ("INNER", "LEFT", "RIGHT", "CROSS", "FULL", "NATURAL", "STRAIGHT_JOIN")):
                if stack[-1] in ("ON", "USING", "FROM"):
                    stack[-1] = "FROM"
            elif u in _CLAUSE_STARTERS:
                stack[-1] = _CLAUSE_STARTERS[u]
        out.append(stack[-1])
    return out


def find_sites(text: str, rules: Sequence[RewriteRule]) -> List[RewriteSite]:
    """All rewrite sites in ``text``, longest phrase first, non-overlapping.

    Only keyword/operator tokens are matched: string literals, quoted
    identifiers and comments are never part of a site. The ``AND`` of
    ``BETWEEN x AND y`` is not a site.
    """
    toks = sqltext.tokenize(text)
    sig = [t for t in toks if t.significant]
    clauses = _clause_map(sig)
    by_len = sorted(rules, key=lambda r: -len(r.words))
    sites: List[RewriteSite] = []
    depth = 0
    between_at: List[int] = []  # paren depths with an open BETWEEN
    i = 0
    while i < len(sig):
        t = sig[i]
        if t.text == "(":
            depth += 1
        elif t.text == ")":
            depth -= 1
            between_at = [d for d in between_at if d <= depth]
        if t.is_word("BETWEEN"):
            between_at.append(depth)
            i += 1
            continue
        if t.is_word("AND") and depth in between_at:
            between_at.remove(depth)
            i += 1
            continue
        if t.kind not in (sqltext.WORD, sqltext.OP, sqltext.PUNCT):
            i += 1
            continue
        matched = None
        for r in by_len:
            words = r.words
            n = len(words)
            if i + n > len(sig):
                continue
            if all(sig[i + k].kind in (sqltext.WORD, sqltext.OP, sqltext.PUNCT) and sig[i + k].upper == w
                   for k, w in enumerate(words)):
                matched = r
                break
        if matched is None:
            i += 1
            continue
        n = len(matched.words)
        if clauses[i] in matched.clauses:
            sites.append(RewriteSite(sig[i].start, sig[i + n - 1].end, matched))
        i += n
    return sites


def logic_shift(
    stmt: Statement,
    rules: Optional[Sequence[RewriteRule]] = None,
    dialect: str = "sqlite",
    config: Optional[MutationConfig] = None,
    rng: Optional[random.Random] = None,
) -> Statement:
    """Rewrite each legal site independently with ``config.rewrite_probability``."""
    rules = load_rewrite_rules() if rules is None else rules
    config = config or MutationConfig()
    rng = rng or random.Random()
    text = stmt.text if isinstance(stmt, Statement) else stmt
    pieces: List[str] = []
    last = 0
    changed = False
    for site in find_sites(text, rules):
        options = site.rule.choices(dialect)
        if not options or not rng.random() < config.rewrite_probability:
            continue
        pieces.append(text[last : site.start])
        pieces.append(rng.choice(options))
        last = site.end
        changed = True
    if not changed:
        return stmt if isinstance(stmt, Statement) else Statement(text)
    pieces.append(text[last:])
    return Statement("".join(pieces))


def mutate(
    t1: TestCase,
    t2: TestCase,
    config: Optional[MutationConfig] = None,
    dialect: str = "sqlite",
    rng: Optional[random.Random] = None,
    rules: Optional[Sequence[RewriteRule]] = None,
) -> TestCase:
    """T* = unify(S1, S2) + logic_shift(drop_filter(crossover(O1, O2)))."""
    config = config or MutationConfig()
    rng = rng or random.Random()
    schema = unify_schemas(t1.schema_part, t2.schema_part, rng)
    ops = drop_filter(crossover(t1.op_part, t2.op_part, config, rng), config, rng)
    ops = [logic_shift(s, rules, dialect, config, rng) for s in ops]
    # a rewrite cannot turn an operation into a schema statement (only
    # operators change), so the partition below keeps the op order intact
    return TestCase.from_statements(list(schema) + ops, lineage=(t1.case_id, t2.case_id))
