"""Grammar loading and bounded template expansion.

Grammars are written in a subset of ANTLR4 parser-rule syntax. Every rule body
is normalised into a tree of four node kinds (sequence, optional, choice,
repeat) and expanded top-down into skeletal statements in which the configured
leaf nonterminals stay as ``[name]`` placeholders.
"""

from __future__ import annotations

import enum
import logging
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

log = logging.getLogger(__name__)

__all__ = [
    "RuleKind",
    "Terminal",
    "Ref",
    "GrammarRule",
    "Grammar",
    "ExpansionConfig",
    "SqlTemplate",
    "GrammarSyntaxError",
    "UnresolvedReference",
    "DepthExhausted",
    "BudgetExceeded",
    "parse_grammar",
    "load_grammar",
    "expand",
    "expand_batch",
    "enumerate_all",
    "replay_trace",
    "render_tokens",
]


class GrammarSyntaxError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class UnresolvedReference(ValueError):
    def __init__(self, name: str):
        super().__init__(f"unresolved nonterminal: {name}")
        self.name = name


class DepthExhausted(RuntimeError):
    pass


class BudgetExceeded(RuntimeError):
    pass


class RuleKind(enum.Enum):
    SEQUENCE = "Sequence"
    OPTIONAL = "Optional"
    CHOICE = "Choice"
    REPEAT = "Repeat"


@dataclass(frozen=True)
class Terminal:
    text: str


@dataclass(frozen=True)
class Ref:
    name: str


Symbol = Union[Terminal, Ref, "GrammarRule"]


@dataclass(frozen=True)
class GrammarRule:
    name: str
    kind: RuleKind
    children: Tuple[Symbol, ...]
    separator: Optional[str] = None

    def __post_init__(self):
        n = len(self.children)
        if self.kind is RuleKind.CHOICE and n < 2:
            raise ValueError(f"{self.name}: choice needs >= 2 children")
        if self.kind in (RuleKind.OPTIONAL, RuleKind.REPEAT) and n != 1:
            raise ValueError(f"{self.name}: {self.kind.value} needs exactly 1 child")
        if self.separator is not None and self.kind is not RuleKind.REPEAT:
            raise ValueError(f"{self.name}: only repeat rules take a separator")

    def walk(self) -> Iterator[Symbol]:
        yield self
        for c in self.children:
            if isinstance(c, GrammarRule):
                yield from c.walk()
            else:
                yield c


@dataclass(frozen=True)
class Grammar:
    rules: Mapping[str, GrammarRule]
    start_symbols: Tuple[str, ...]
    leaf_set: FrozenSet[str]

    def __post_init__(self):
        missing = [s for s in self.start_symbols if s not in self.rules]
        if missing:
            raise UnresolvedReference(missing[0])

    def references(self) -> Set[str]:
        out = set()
        for rule in self.rules.values():
            for sym in rule.walk():
                if isinstance(sym, Ref):
                    out.add(sym.name)
        return out


@dataclass(frozen=True)
class ExpansionConfig:
    max_depth: int = 6
    default_quota: int = 3
    rule_quota: Mapping[str, int] = field(default_factory=dict)
    optional_probability: float = 0.5
    repeat_continue: float = 0.5  # geometric parameter for extra repetitions

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.default_quota < 1 or any(v < 1 for v in self.rule_quota.values()):
            raise ValueError("quotas must be >= 1")
        if not 0.0 <= self.optional_probability <= 1.0:
            raise ValueError("optional_probability must lie in [0, 1]")
        if not 0.0 <= self.repeat_continue < 1.0:
            raise ValueError("repeat_continue must lie in [0, 1)")

    def quota(self, name: str) -> int:
        return self.rule_quota.get(name, self.default_quota)


TraceEntry = Tuple[str, int]


@dataclass(frozen=True)
class SqlTemplate:
    text: str
    derivation_trace: Tuple[TraceEntry, ...] = field(default=(), compare=False)
    start: str = field(default="", compare=False)
    depth: int = field(default=0, compare=False)

    @property
    def placeholders(self) -> List[str]:
        return re.findall(r"\[([A-Za-z_][A-Za-z0-9_\-]*)\]", self.text)

    def rule_usage(self, grammar: Grammar) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for name, _ in self.derivation_trace:
            if name in grammar.rules:
                counts[name] = counts.get(name, 0) + 1
        return counts


# ---------------------------------------------------------------------------
# grammar file parsing

_LEX = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*.*?\*/)
  | (?P<literal>'(?:\\.|[^'\\])*')
  | (?P<charset>\[(?:\\.|[^\]\\])*\])
  | (?P<action>\{)
  | (?P<arrow>->)
  | (?P<assign>\+=|=)
  | (?P<label>\#\s*[A-Za-z_][A-Za-z0-9_]*)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[:;|()?*+~.,@<>!])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int


def _lex(src: str) -> List[_Tok]:
    out: List[_Tok] = []
    pos, line = 0, 1
    n = len(src)
    while pos < n:
        m = _LEX.match(src, pos)
        if m is None:
            raise GrammarSyntaxError(line, f"unexpected character {src[pos]!r}")
        kind = m.lastgroup
        text = m.group()
        if kind == "action":
            # skip a balanced {...} block (actions, options, tokens)
            depth, j = 0, pos
            while j < n:
                if src[j] == "{":
                    depth += 1
                elif src[j] == "}":
                    depth -= 1
                    if depth == 0:
                        break
                j += 1
            if j >= n:
                raise GrammarSyntaxError(line, "unterminated { block")
            text = src[pos : j + 1]
            out.append(_Tok("action", text, line))
            line += text.count("\n")
            pos = j + 1
            continue
        if kind not in ("ws", "lcomment", "bcomment"):
            out.append(_Tok(kind, text, line))
        line += text.count("\n")
        pos = m.end()
    return out


def _unquote(lit: str) -> str:
    body = lit[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), body)


def _is_token_name(name: str) -> bool:
    return name[:1].isupper()


def _keyword_text(name: str) -> str:
    # K_SELECT / SELECT_ / SELECT_SYMBOL -> SELECT
    if name.startswith("K_"):
        name = name[2:]
    for suffix in ("_SYMBOL", "_"):
        if name.endswith(suffix) and len(name) > len(suffix):
            name = name[: -len(suffix)]
            break
    return name


class _RuleParser:
    """Recursive-descent parser for one rule body."""

    def __init__(self, toks: List[_Tok], token_literals: Dict[str, str], leaf_set: FrozenSet[str]):
        self.toks = toks
        self.i = 0
        self.token_literals = token_literals
        self.leaf_set = leaf_set

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def alternatives(self) -> List[list]:
        alts = [self.sequence()]
        while self.peek() is not None and self.peek().text == "|":
            self.take()
            alts.append(self.sequence())
        return alts

    def sequence(self) -> list:
        items = []
        while True:
            t = self.peek()
            if t is None or t.text in ("|", ")", ";"):
                break
            if t.kind == "label":
                self.take()
                continue
            if t.kind in ("action",):
                self.take()
                continue
            if t.kind == "arrow":
                # lexer commands / rewrite: skip to end of alternative
                while self.peek() is not None and self.peek().text not in ("|", ")", ";"):
                    self.take()
                continue
            items.append(self.element())
        return items

    def element(self):
        t = self.peek()
        # label=atom / label+=atom
        if t.kind == "id" and self.i + 1 < len(self.toks) and self.toks[self.i + 1].kind == "assign":
            self.take()
            self.take()
        atom = self.atom()
        t = self.peek()
        while t is not None and t.text in ("?", "*", "+"):
            self.take()
            atom = ("suffix", t.text, atom, t.line)
            nxt = self.peek()
            if nxt is not None and nxt.text == "?":  # non-greedy marker
                self.take()
            t = self.peek()
        return atom

    def atom(self):
        t = self.take()
        if t.kind == "literal":
            return ("term", _unquote(t.text))
        if t.kind == "id":
            if t.text in self.leaf_set:
                return ("ref", t.text, t.line)
            if _is_token_name(t.text):
                return ("term", self.token_literals.get(t.text, _keyword_text(t.text)))
            return ("ref", t.text, t.line)
        if t.text == "(":
            alts = self.alternatives()
            close = self.peek()
            if close is None or close.text != ")":
                raise GrammarSyntaxError(t.line, "unbalanced parenthesis")
            self.take()
            return ("group", alts)
        raise GrammarSyntaxError(t.line, f"unexpected {t.text!r}")


class _Builder:
    """Turns parsed tuples into GrammarRule trees with preorder node names."""

    def __init__(self, rule_name: str):
        self.rule = rule_name
        self.counter = 0

    def next_name(self) -> str:
        self.counter += 1
        return f"{self.rule}.{self.counter}"

    def top(self, alts: List[list]) -> GrammarRule:
        if len(alts) > 1:
            return GrammarRule(self.rule, RuleKind.CHOICE, tuple(self.seq_node(a, None) for a in alts))
        items = self.items(alts[0])
        return GrammarRule(self.rule, RuleKind.SEQUENCE, tuple(items))

    def seq_node(self, items: list, name: Optional[str]) -> Symbol:
        name = name or self.next_name()
        built = self.items(items)
        if len(built) == 1:
            return built[0]
        return GrammarRule(name, RuleKind.SEQUENCE, tuple(built))

    def items(self, items: list) -> List[Symbol]:
        built = [self.node(it) for it in items]
        return _fold_separated_repeats(built)

    def node(self, item) -> Symbol:
        tag = item[0]
        if tag == "term":
            return Terminal(item[1])
        if tag == "ref":
            return Ref(item[1])
        if tag == "group":
            alts = item[1]
            if len(alts) == 1:
                return self.seq_node(alts[0], None)
            name = self.next_name()
            return GrammarRule(name, RuleKind.CHOICE, tuple(self.seq_node(a, None) for a in alts))
        if tag == "suffix":
            op, inner = item[1], item[2]
            name = self.next_name()
            child = self.node(inner)
            if op == "?":
                return GrammarRule(name, RuleKind.OPTIONAL, (child,))
            if op == "+":
                return GrammarRule(name, RuleKind.REPEAT, (child,))
            rep = GrammarRule(self.next_name(), RuleKind.REPEAT, (child,))
            return GrammarRule(name, RuleKind.OPTIONAL, (rep,))
        raise AssertionError(tag)


def _fold_separated_repeats(items: List[Symbol]) -> List[Symbol]:
    """Rewrite ``E (sep E)*`` into a single separated repeat of ``E``."""
    out: List[Symbol] = []
    for sym in items:
        prev = out[-1] if out else None
        if (
            prev is not None
            and isinstance(sym, GrammarRule)
            and sym.kind is RuleKind.OPTIONAL
            and isinstance(sym.children[0], GrammarRule)
            and sym.children[0].kind is RuleKind.REPEAT
        ):
            body = sym.children[0].children[0]
            if (
                isinstance(body, GrammarRule)
                and body.kind is RuleKind.SEQUENCE
                and len(body.children) == 2
                and isinstance(body.children[0], Terminal)
                and _same_shape(body.children[1], prev)
            ):
                out[-1] = GrammarRule(sym.children[0].name, RuleKind.REPEAT, (prev,), separator=body.children[0].text)
                continue
        out.append(sym)
    return out


def _same_shape(a: Symbol, b: Symbol) -> bool:
    if isinstance(a, GrammarRule) and isinstance(b, GrammarRule):
        return (
            a.kind is b.kind
            and a.separator == b.separator
            and len(a.children) == len(b.children)
            and all(_same_shape(x, y) for x, y in zip(a.children, b.children))
        )
    return a == b


def parse_grammar(
    source_text: str,
    leaf_set: Iterable[str] = (),
    start_symbols: Optional[Sequence[str]] = None,
) -> Grammar:
    """Parse grammar text into a :class:`Grammar`.

    Uppercase token references become literal keywords (``K_`` prefixes and
    trailing ``_`` are stripped; lexer rules of the form ``COMMA : ',' ;``
    supply their literal). Lowercase identifiers are nonterminals and must
    resolve to a parser rule or to a member of ``leaf_set``.

    ``start_symbols`` defaults to rules whose names end in ``Statement`` or
    ``Stmt``; failing that, to every parser rule.
    """
    leaves = frozenset(leaf_set)
    toks = _lex(source_text)
    # split into top-level declarations ending at ';'
    decls: List[List[_Tok]] = []
    cur: List[_Tok] = []
    for t in toks:
        cur.append(t)
        if t.text == ";":
            decls.append(cur)
            cur = []
    if any(t.kind != "action" for t in cur):
        raise GrammarSyntaxError(cur[0].line, "declaration not terminated by ';'")

    token_literals: Dict[str, str] = {}
    parser_decls: List[Tuple[str, List[_Tok], int]] = []
    for d in decls:
        d = [t for t in d if t.kind != "action" or d.index(t) > 0]
        while d and d[0].kind == "action":
            d = d[1:]
        if not d:
            continue
        head = d[0]
        if head.kind == "id" and head.text in ("grammar", "parser", "lexer", "import", "mode", "options", "tokens", "channels"):
            continue
        if head.text == "@":
            continue
        if head.kind == "id" and head.text == "fragment":
            continue
        if head.kind != "id" or len(d) < 3:
            raise GrammarSyntaxError(head.line, f"cannot parse declaration starting at {head.text!r}")
        # skip rule modifiers/returns/locals up to ':'
        try:
            colon = next(i for i, t in enumerate(d) if t.text == ":")
        except StopIteration:
            raise GrammarSyntaxError(head.line, f"rule {head.text!r} has no ':'") from None
        body = d[colon + 1 : -1]
        if _is_token_name(head.text):
            lits = [t for t in body if t.kind != "action"]
            if len(lits) == 1 and lits[0].kind == "literal":
                token_literals[head.text] = _unquote(lits[0].text)
            continue
        parser_decls.append((head.text, body, head.line))

    rules: Dict[str, GrammarRule] = {}
    for name, body, line in parser_decls:
        if name in rules:
            raise GrammarSyntaxError(line, f"rule {name!r} defined twice")
        p = _RuleParser(body, token_literals, leaves)
        try:
            alts = p.alternatives()
        except IndexError:
            raise GrammarSyntaxError(line, f"truncated rule {name!r}") from None
        if p.peek() is not None:
            raise GrammarSyntaxError(p.peek().line, f"unexpected {p.peek().text!r} in rule {name!r}")
        rules[name] = _Builder(name).top(alts)

    for rule in rules.values():
        for sym in rule.walk():
            if isinstance(sym, Ref) and sym.name not in rules and sym.name not in leaves:
                raise UnresolvedReference(sym.name)

    if start_symbols is None:
        starts = [n for n in rules if n.endswith(("Statement", "Stmt", "statement", "stmt"))]
        start_symbols = starts or list(rules)
    return Grammar(rules=dict(rules), start_symbols=tuple(start_symbols), leaf_set=leaves)


def load_grammar(name_or_path: str, leaf_set: Iterable[str] = (), start_symbols=None) -> Grammar:
    """Load a shipped grammar by name (``sqlite``, ``mysql_subset``) or from a path."""
    if "/" not in name_or_path and not name_or_path.endswith(".g4"):
        text = resources.files("sqlfuzz.data.grammars").joinpath(f"{name_or_path}.g4").read_text("utf-8")
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_grammar(text, leaf_set, start_symbols)


# ---------------------------------------------------------------------------
# expansion

_NO_SPACE_BEFORE = {",", ")", ".", ";"}
_NO_SPACE_AFTER = {"(", ".", ","}


def render_tokens(tokens: Sequence[str]) -> str:
    parts: List[str] = []
    for tok in tokens:
        if tok == "":
            continue
        if parts and tok not in _NO_SPACE_BEFORE and parts[-1] not in _NO_SPACE_AFTER:
            parts.append(" ")
        parts.append(tok)
    return "".join(parts)


_INF = 10**9


def _min_depths(grammar: Grammar) -> Dict[str, int]:
    """Smallest derivation depth for every rule (fixpoint, quotas ignored)."""
    md = {n: _INF for n in grammar.rules}

    def node_md(sym: Symbol) -> int:
        if isinstance(sym, Terminal):
            return 0
        if isinstance(sym, Ref):
            if sym.name in grammar.leaf_set:
                return 0
            return md[sym.name]
        if sym.kind is RuleKind.OPTIONAL:
            return 0
        if sym.kind is RuleKind.REPEAT:
            return node_md(sym.children[0])
        vals = [node_md(c) for c in sym.children]
        if sym.kind is RuleKind.CHOICE:
            return min(vals)
        return max(vals, default=0)

    changed = True
    while changed:
        changed = False
        for name, rule in grammar.rules.items():
            v = node_md(rule)
            v = _INF if v >= _INF else v + 1
            if v < md[name]:
                md[name] = v
                changed = True
    return md


def _add(a: Mapping[str, int], b: Mapping[str, int], times: int = 1) -> Dict[str, int]:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v * times
    return out


class _Expander:
    """Depth-first derivation search.

    ``order`` decides the sequence in which the alternatives of a decision
    point are tried: sampling shuffles them, replay forces the recorded one
    and enumeration tries all of them in index order.

    With ``reserve`` set, every pending sibling keeps enough quota for its
    cheapest completion, so sampling never has to backtrack out of a
    half-built statement. Enumeration and replay only apply the exact
    depth/quota checks.
    """

    def __init__(self, grammar: Grammar, config: ExpansionConfig, order, reserve: bool = False):
        self.g = grammar
        self.cfg = config
        self.order = order
        self.reserve = reserve
        self.md = _min_depths(grammar)
        self._node_md: Dict[int, tuple] = {}
        self._node_use: Dict[int, tuple] = {}
        self._rule_use: Dict[str, Dict[str, int]] = {}

    def sym_md(self, sym: Symbol) -> int:
        if isinstance(sym, Terminal):
            return 0
        if isinstance(sym, Ref):
            return 0 if sym.name in self.g.leaf_set else self.md[sym.name]
        key = id(sym)
        if key not in self._node_md:
            if sym.kind is RuleKind.OPTIONAL:
                v = 0
            elif sym.kind is RuleKind.REPEAT:
                v = self.sym_md(sym.children[0])
            elif sym.kind is RuleKind.CHOICE:
                v = min(self.sym_md(c) for c in sym.children)
            else:
                v = max((self.sym_md(c) for c in sym.children), default=0)
            # the node is stored with its value so its id cannot be recycled
            self._node_md[key] = (sym, v)
        return self._node_md[key][1]

    def min_use(self, sym: Symbol) -> Dict[str, int]:
        """Rule usage of the canonical shallowest derivation of ``sym``."""
        if isinstance(sym, Terminal):
            return {}
        if isinstance(sym, Ref):
            if sym.name in self.g.leaf_set or self.md[sym.name] >= _INF:
                return {}
            if sym.name not in self._rule_use:
                rule = self.g.rules[sym.name]
                self._rule_use[sym.name] = _add({sym.name: 1}, self.min_use(rule))
            return self._rule_use[sym.name]
        key = id(sym)
        if key not in self._node_use:
            if sym.kind is RuleKind.OPTIONAL:
                v: Dict[str, int] = {}
            elif sym.kind is RuleKind.REPEAT:
                v = self.min_use(sym.children[0])
            elif sym.kind is RuleKind.CHOICE:
                # shallowest child; following it strictly lowers the depth of every rule reference
                best = min(sym.children, key=self.sym_md)
                v = self.min_use(best)
            else:
                v = {}
                for c in sym.children:
                    v = _add(v, self.min_use(c))
            self._node_use[key] = (sym, v)
        return self._node_use[key][1]

    def fits(self, sym: Symbol, depth_left: int, usage, reserved, times: int = 1) -> bool:
        if self.sym_md(sym) > depth_left:
            return False
        if not self.reserve:
            return True
        for r, c in self.min_use(sym).items():
            if usage.get(r, 0) + reserved.get(r, 0) + c * times > self.cfg.quota(r):
                return False
        return True

    # each generator yields (tokens, trace, usage, depth)
    def gen_ref(self, name: str, depth_left: int, usage: Dict[str, int], reserved: Dict[str, int]):
        if name in self.g.leaf_set:
            yield [f"[{name}]"], [], usage, 0
            return
        if self.md[name] > depth_left or usage.get(name, 0) >= self.cfg.quota(name):
            return
        rule = self.g.rules[name]
        u2 = dict(usage)
        u2[name] = u2.get(name, 0) + 1
        if rule.kind is RuleKind.CHOICE:
            options = [k for k, c in enumerate(rule.children) if self.fits(c, depth_left - 1, u2, reserved)]
            for k in self.order("choice", rule, options):
                for toks, tr, u3, d in self.gen(rule.children[k], depth_left - 1, u2, reserved):
                    yield toks, [(name, k)] + tr, u3, d + 1
        else:
            for k in self.order("rule", rule, [0]):
                for toks, tr, u3, d in self.gen_body(rule, depth_left - 1, u2, reserved):
                    yield toks, [(name, k)] + tr, u3, d + 1

    def gen(self, sym: Symbol, depth_left: int, usage: Dict[str, int], reserved: Dict[str, int]):
        if isinstance(sym, Terminal):
            yield [sym.text], [], usage, 0
        elif isinstance(sym, Ref):
            yield from self.gen_ref(sym.name, depth_left, usage, reserved)
        elif sym.kind is RuleKind.SEQUENCE:
            yield from self.gen_body(sym, depth_left, usage, reserved)
        elif sym.kind is RuleKind.OPTIONAL:
            child = sym.children[0]
            options = [0, 1] if self.fits(child, depth_left, usage, reserved) else [0]
            for k in self.order("optional", sym, options):
                if k == 0:
                    yield [], [(sym.name, 0)], usage, 0
                else:
                    for toks, tr, u2, d in self.gen(child, depth_left, usage, reserved):
                        yield toks, [(sym.name, 1)] + tr, u2, d
        elif sym.kind is RuleKind.CHOICE:
            options = [k for k, c in enumerate(sym.children) if self.fits(c, depth_left, usage, reserved)]
            for k in self.order("choice", sym, options):
                for toks, tr, u2, d in self.gen(sym.children[k], depth_left, usage, reserved):
                    yield toks, [(sym.name, k)] + tr, u2, d
        else:  # REPEAT
            child = sym.children[0]
            cap = self.cfg.quota(sym.name)
            counts = [n for n in range(1, cap + 1) if self.fits(child, depth_left, usage, reserved, times=n)]
            for count in self.order("repeat", sym, counts):
                for toks, tr, u2, d in self._seq([child] * count, 0, depth_left, usage, reserved, sym.separator):
                    yield toks, [(sym.name, count)] + tr, u2, d

    def gen_body(self, rule: GrammarRule, depth_left: int, usage, reserved):
        if rule.kind is RuleKind.SEQUENCE:
            yield from self._seq(list(rule.children), 0, depth_left, usage, reserved, None)
        else:
            # a hand-built rule whose top node is optional/repeat
            anon = GrammarRule(rule.name + ".0", rule.kind, rule.children, rule.separator)
            yield from self.gen(anon, depth_left, usage, reserved)

    def _seq(self, items: List[Symbol], i: int, depth_left: int, usage, reserved, sep: Optional[str]):
        if i == len(items):
            yield [], [], usage, 0
            return
        inner = reserved
        if self.reserve:
            for later in items[i + 1 :]:
                inner = _add(inner, self.min_use(later))
        for t1, tr1, u1, d1 in self.gen(items[i], depth_left, usage, inner):
            for t2, tr2, u2, d2 in self._seq(items, i + 1, depth_left, u1, reserved, sep):
                if sep is not None and i + 1 < len(items):
                    yield t1 + [sep] + t2, tr1 + tr2, u2, max(d1, d2)
                else:
                    yield t1 + t2, tr1 + tr2, u2, max(d1, d2)


def _random_order(rng: random.Random, cfg: ExpansionConfig):
    def order(kind: str, node: GrammarRule, options: List[int]) -> List[int]:
        if kind == "optional":
            if len(options) == 1:
                return options
            return [1, 0] if rng.random() < cfg.optional_probability else [0, 1]
        if kind == "repeat":
            extra = 0
            while extra + 1 < len(options) and rng.random() < cfg.repeat_continue:
                extra += 1
            first = options[extra]
            return [first] + [o for o in options if o != first]
        if len(options) <= 1:
            return options
        return rng.sample(options, len(options))

    return order


def _check_start(grammar: Grammar, start: str) -> None:
    if start not in grammar.rules:
        raise UnresolvedReference(start)


def expand(grammar: Grammar, start: str, config: ExpansionConfig, rng: random.Random) -> SqlTemplate:
    """Sample one template rooted at ``start``.

    Choices are uniform, optionals are included with
    ``config.optional_probability`` and repeat counts are geometric, all
    subject to the depth bound and per-rule quotas; a branch that cannot be
    completed inside the bounds is backtracked.
    """
    _check_start(grammar, start)
    ex = _Expander(grammar, config, _random_order(rng, config), reserve=True)
    if not ex.fits(Ref(start), config.max_depth, {}, {}):
        # the cheapest derivation already breaks a quota: plain backtracking
        ex.reserve = False
    for toks, trace, _, depth in ex.gen_ref(start, config.max_depth, {}, {}):
        return SqlTemplate(render_tokens(toks), tuple(trace), start, depth)
    raise DepthExhausted(f"no derivation of {start!r} within depth {config.max_depth} and quotas")


def replay_trace(grammar: Grammar, start: str, trace: Sequence[TraceEntry], config: ExpansionConfig) -> SqlTemplate:
    """Re-derive a template from its recorded decisions."""
    _check_start(grammar, start)
    pos = [0]

    def order(kind, node, options):
        if pos[0] >= len(trace):
            raise ValueError("derivation trace exhausted")
        name, k = trace[pos[0]]
        if name != node.name:
            raise ValueError(f"trace mismatch at {pos[0]}: expected {node.name}, got {name}")
        pos[0] += 1
        return [k]

    ex = _Expander(grammar, config, order)
    for toks, tr, _, depth in ex.gen_ref(start, config.max_depth, {}, {}):
        if pos[0] != len(trace):
            raise ValueError("derivation trace not fully consumed")
        return SqlTemplate(render_tokens(toks), tuple(tr), start, depth)
    raise ValueError("trace does not describe a valid derivation")


def enumerate_all(grammar: Grammar, start: str, config: ExpansionConfig, cap: int = 200_000) -> Set[SqlTemplate]:
    """Every distinct template derivable from ``start`` under the bounds."""
    _check_start(grammar, start)
    ex = _Expander(grammar, config, lambda kind, node, options: options)
    out: Dict[str, SqlTemplate] = {}
    visited = 0
    for toks, trace, _, depth in ex.gen_ref(start, config.max_depth, {}, {}):
        visited += 1
        if visited > cap:
            raise BudgetExceeded(f"more than {cap} derivations of {start!r}")
        text = render_tokens(toks)
        if text not in out:
            out[text] = SqlTemplate(text, tuple(trace), start, depth)
    return set(out.values())


def expand_batch(
    grammar: Grammar,
    starts: Sequence[str],
    config: ExpansionConfig,
    rng: random.Random,
    count: int,
) -> List[SqlTemplate]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not starts:
        raise ValueError("no start symbols given")
    return [expand(grammar, rng.choice(list(starts)), config, rng) for _ in range(count)]
