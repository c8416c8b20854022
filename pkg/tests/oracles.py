"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except for data types it has to
walk (grammar trees). Each oracle is written for clarity over speed.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter
from typing import Dict, FrozenSet, Iterable, List, Sequence, Set, Tuple

# --------------------------------------------------------------------------
# grammar: brute-force enumeration over a hand-desugared grammar
#
# A grammar is {rule: item}; an item is one of
#   ("t", "KW")                     terminal
#   ("leaf", "name")                placeholder [name]
#   ("ref", "rule")                 named rule (costs one level of depth)
#   ("seq", [items])
#   ("alt", [items])
#   ("opt", item)
#   ("rep", item, sep_or_None)      1..quota copies


def _render(tokens: Sequence[str]) -> str:
    text = " ".join(t for t in tokens if t)
    text = re.sub(r" ([,).;])", r"\1", text)
    text = re.sub(r"([(.,]) ", r"\1", text)
    return text


def brute_force(grammar: Dict[str, tuple], start: str, max_depth: int, quota: int) -> Set[str]:
    """All renderings of ``start`` with depth <= max_depth and every rule used <= quota times."""

    def items(item, d) -> Set[Tuple[Tuple[str, ...], Tuple[Tuple[str, int], ...]]]:
        kind = item[0]
        if kind == "t":
            return {((item[1],), ())}
        if kind == "leaf":
            return {((f"[{item[1]}]",), ())}
        if kind == "ref":
            if d < 1:
                return set()
            out = set()
            for toks, use in items(grammar[item[1]], d - 1):
                c = Counter(dict(use))
                c[item[1]] += 1
                if c[item[1]] <= quota:  # counts only grow: prune early
                    out.add((toks, tuple(sorted(c.items()))))
            return out
        if kind == "seq":
            return seq(item[1], d)
        if kind == "alt":
            return set().union(*(items(x, d) for x in item[1]))
        if kind == "opt":
            return {((), ())} | items(item[1], d)
        if kind == "rep":
            out = set()
            for n in range(1, quota + 1):
                parts = []
                for k in range(n):
                    if k and item[2] is not None:
                        parts.append(("t", item[2]))
                    parts.append(item[1])
                out |= seq(parts, d)
            return out
        raise AssertionError(kind)

    def seq(parts, d):
        acc = {((), ())}
        for p in parts:
            nxt = set()
            alts = items(p, d)
            for (t1, u1), (t2, u2) in itertools.product(acc, alts):
                c = Counter(dict(u1))
                c.update(dict(u2))
                if max(c.values(), default=0) <= quota:
                    nxt.add((t1 + t2, tuple(sorted(c.items()))))
            acc = nxt
        return acc

    return {
        _render(toks)
        for toks, use in items(("ref", start), max_depth)
        if all(v <= quota for _, v in use)
    }


# --------------------------------------------------------------------------
# grammar: independent trace walker (depth, quota and text from a trace)

def walk_trace(grammar, start: str, trace):
    """Follow ``trace`` through the grammar tree; return (text, depth, rule usage, repeat counts)."""
    from sqlfuzz.grammar import GrammarRule, Ref, RuleKind, Terminal

    pos = [0]
    usage: Counter = Counter()
    repeats: Dict[str, int] = {}

    def take(name):
        got, k = trace[pos[0]]
        assert got == name, f"trace entry {pos[0]} is {got}, walker is at {name}"
        pos[0] += 1
        return k

    def node(sym) -> Tuple[List[str], int]:
        if isinstance(sym, Terminal):
            return [sym.text], 0
        if isinstance(sym, Ref):
            if sym.name in grammar.leaf_set:
                return [f"[{sym.name}]"], 0
            rule = grammar.rules[sym.name]
            usage[sym.name] += 1
            k = take(sym.name)
            if rule.kind is RuleKind.CHOICE:
                toks, d = node(rule.children[k])
            elif rule.kind is RuleKind.SEQUENCE:
                toks, d = seq(rule.children, None)
            else:
                toks, d = node(GrammarRule(rule.name + ".0", rule.kind, rule.children, rule.separator))
            return toks, d + 1
        if sym.kind is RuleKind.SEQUENCE:
            return seq(sym.children, None)
        k = take(sym.name)
        if sym.kind is RuleKind.OPTIONAL:
            return node(sym.children[0]) if k == 1 else ([], 0)
        if sym.kind is RuleKind.CHOICE:
            return node(sym.children[k])
        repeats[sym.name] = max(repeats.get(sym.name, 0), k)
        return seq([sym.children[0]] * k, sym.separator)

    def seq(children, sep):
        toks, depth = [], 0
        for i, c in enumerate(children):
            if i and sep is not None:
                toks.append(sep)
            t, d = node(c)
            toks += t
            depth = max(depth, d)
        return toks, depth

    toks, depth = node(Ref(start))
    assert pos[0] == len(trace), "trace not fully consumed"
    return _render(toks), depth, usage, repeats


# --------------------------------------------------------------------------
# ddmin: exhaustive subset search

def all_subsets(n: int) -> Iterable[FrozenSet[int]]:
    for r in range(n + 1):
        for c in itertools.combinations(range(n), r):
            yield frozenset(c)


def is_one_minimal(kept: Sequence[int], oracle) -> bool:
    """Removing any single element makes the oracle false."""
    return all(not oracle(frozenset(kept) - {x}) for x in kept)


# --------------------------------------------------------------------------
# logic shift: a masking differ

_TOKEN = re.compile(r"'(?:[^']|'')*'|\"[^\"]*\"|/\*.*?\*/|\w+|<=|>=|<>|!=|==|\S", re.S)


def _runs(text: str, vocab: Set[str]) -> Tuple[List[str], List[List[str]]]:
    """Split a statement into anchors (tokens outside ``vocab``) and the vocab runs between them."""
    anchors: List[str] = []
    runs: List[List[str]] = [[]]
    for tok in _TOKEN.findall(text):
        if tok.upper() in vocab:
            runs[-1].append(tok.upper())
        else:
            anchors.append(tok)
            runs.append([])
    return anchors, runs


def token_diff_sites(before: str, after: str, vocab: Set[str]) -> List[Tuple[List[str], List[str]]]:
    """Masking differ: keyword/operator runs that differ between two statements.

    Tokens outside ``vocab`` (literals, identifiers, comments, punctuation)
    serve as anchors and must be byte-identical; an AssertionError names the
    first anchor that is not.
    """
    a_anchor, a_runs = _runs(before, vocab)
    b_anchor, b_runs = _runs(after, vocab)
    assert a_anchor == b_anchor, f"non-keyword tokens differ: {a_anchor} vs {b_anchor}"
    return [(x, y) for x, y in zip(a_runs, b_runs) if x != y]
