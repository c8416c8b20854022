import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force, walk_trace
from sqlfuzz.dialect import load_dialect
from sqlfuzz.grammar import (
    BudgetExceeded,
    DepthExhausted,
    ExpansionConfig,
    GrammarRule,
    GrammarSyntaxError,
    Ref,
    RuleKind,
    Terminal,
    UnresolvedReference,
    enumerate_all,
    expand,
    expand_batch,
    load_grammar,
    parse_grammar,
    replay_trace,
)

ALTER_G4 = """
alterTable
    : ALTER (ONLINE | OFFLINE)? IGNORE? TABLE tableName alterSpecification (',' alterSpecification)* partitionDefinitions?
    ;
"""
ALTER_LEAVES = ["tableName", "alterSpecification", "partitionDefinitions"]
ALTER_BF = {
    "alterTable": ("seq", [
        ("t", "ALTER"),
        ("opt", ("alt", [("t", "ONLINE"), ("t", "OFFLINE")])),
        ("opt", ("t", "IGNORE")),
        ("t", "TABLE"),
        ("leaf", "tableName"),
        ("rep", ("leaf", "alterSpecification"), ","),
        ("opt", ("leaf", "partitionDefinitions")),
    ]),
}

# toy grammars (<= 5 rules), each written twice: as grammar text and desugared by hand
TOYS = [
    (
        "s : A b? ; b : B | C ;",
        {"s": ("seq", [("t", "A"), ("opt", ("ref", "b"))]), "b": ("alt", [("t", "B"), ("t", "C")])},
        "s",
    ),
    (
        "e : X | L e R ;",
        {"e": ("alt", [("t", "X"), ("seq", [("t", "L"), ("ref", "e"), ("t", "R")])])},
        "e",
    ),
    (
        "s : A t (',' t)* ; t : B | C u ; u : D+ ;",
        {
            "s": ("seq", [("t", "A"), ("rep", ("ref", "t"), ",")]),
            "t": ("alt", [("t", "B"), ("seq", [("t", "C"), ("ref", "u")])]),
            "u": ("rep", ("t", "D"), None),
        },
        "s",
    ),
    (
        "q : (P | Q)? r+ w ; r : Z v? ; v : V | '(' q ')' ; w : W* ;",
        {
            "q": ("seq", [("opt", ("alt", [("t", "P"), ("t", "Q")])), ("rep", ("ref", "r"), None), ("ref", "w")]),
            "r": ("seq", [("t", "Z"), ("opt", ("ref", "v"))]),
            "v": ("alt", [("t", "V"), ("seq", [("t", "("), ("ref", "q"), ("t", ")")])]),
            "w": ("opt", ("rep", ("t", "W"), None)),
        },
        "q",
    ),
]


# -- parsing ------------------------------------------------------------------

def test_alter_table_rule_kinds():
    g = parse_grammar(ALTER_G4, ALTER_LEAVES)
    rule = g.rules["alterTable"]
    assert rule.kind is RuleKind.SEQUENCE
    kids = rule.children
    assert kids[0] == Terminal("ALTER")
    assert kids[1].kind is RuleKind.OPTIONAL and kids[1].children[0].kind is RuleKind.CHOICE
    assert [c.text for c in kids[1].children[0].children] == ["ONLINE", "OFFLINE"]
    assert kids[2].kind is RuleKind.OPTIONAL and kids[2].children[0] == Terminal("IGNORE")
    rep = kids[5]
    assert rep.kind is RuleKind.REPEAT and rep.separator == "," and rep.children[0] == Ref("alterSpecification")
    assert kids[6].kind is RuleKind.OPTIONAL


def test_single_terminal_rule():
    g = parse_grammar("stmt : COMMIT ;")
    assert g.rules["stmt"].kind is RuleKind.SEQUENCE
    assert g.rules["stmt"].children == (Terminal("COMMIT"),)
    assert expand(g, "stmt", ExpansionConfig(), random.Random(0)).text == "COMMIT"
    assert {t.text for t in enumerate_all(g, "stmt", ExpansionConfig())} == {"COMMIT"}
    assert [t.text for t in expand_batch(g, ["stmt"], ExpansionConfig(), random.Random(0), 1)] == ["COMMIT"]


def test_unresolved_reference():
    with pytest.raises(UnresolvedReference) as ei:
        parse_grammar("s : A foo ;")
    assert ei.value.name == "foo"
    parse_grammar("s : A foo ;", ["foo"])  # a leaf resolves it


def test_syntax_errors_carry_lines():
    with pytest.raises(GrammarSyntaxError) as ei:
        parse_grammar("s : A ;\n\nt : ( B ;")
    assert ei.value.line == 3
    with pytest.raises(GrammarSyntaxError):
        parse_grammar("s : A")
    with pytest.raises(GrammarSyntaxError):
        parse_grammar("s : A ; s : B ;")


def test_lexer_rules_supply_literals_and_keywords_are_stripped():
    g = parse_grammar("s : K_SELECT STAR FROM_ x ; STAR : '*' ;", ["x"])
    assert expand(g, "s", ExpansionConfig(), random.Random(0)).text == "SELECT * FROM [x]"


def test_rule_invariants():
    with pytest.raises(ValueError):
        GrammarRule("c", RuleKind.CHOICE, (Terminal("A"),))
    with pytest.raises(ValueError):
        GrammarRule("o", RuleKind.OPTIONAL, (Terminal("A"), Terminal("B")))
    with pytest.raises(ValueError):
        GrammarRule("s", RuleKind.SEQUENCE, (Terminal("A"),), separator=",")


def test_config_validation():
    for bad in (dict(max_depth=0), dict(default_quota=0), dict(rule_quota={"x": 0}), dict(optional_probability=1.5)):
        with pytest.raises(ValueError):
            ExpansionConfig(**bad)


def test_shipped_grammars_parse():
    for name in ("sqlite", "mysql_subset"):
        d = load_dialect(name)
        g = load_grammar(d.grammar, d.leaf_set, d.start_symbols)
        assert set(g.start_symbols) <= set(g.rules)


# -- expansion ----------------------------------------------------------------

def test_listing_templates_among_alter_table_outputs():
    g = parse_grammar(ALTER_G4, ALTER_LEAVES)
    out = {t.text for t in enumerate_all(g, "alterTable", ExpansionConfig(max_depth=3, default_quota=2))}
    assert "ALTER ONLINE TABLE [tableName] [alterSpecification] [partitionDefinitions]" in out
    assert "ALTER TABLE [tableName] [alterSpecification],[alterSpecification]" in out


def test_toy_enumeration_examples():
    g = parse_grammar(TOYS[0][0])
    assert {t.text for t in enumerate_all(g, "s", ExpansionConfig(max_depth=2))} == {"A", "A B", "A C"}
    assert {t.text for t in enumerate_all(g, "s", ExpansionConfig(max_depth=1))} == {"A"}


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("quota", [1, 2, 3])
@pytest.mark.parametrize("toy", range(len(TOYS)))
def test_enumeration_matches_brute_force(toy, depth, quota):
    text, bf, start = TOYS[toy]
    g = parse_grammar(text)
    got = {t.text for t in enumerate_all(g, start, ExpansionConfig(max_depth=depth, default_quota=quota))}
    assert got == brute_force(bf, start, depth, quota)


@pytest.mark.parametrize("depth,quota", [(1, 1), (1, 2), (3, 2), (3, 3)])
def test_alter_table_matches_brute_force(depth, quota):
    g = parse_grammar(ALTER_G4, ALTER_LEAVES)
    got = {t.text for t in enumerate_all(g, "alterTable", ExpansionConfig(max_depth=depth, default_quota=quota))}
    assert got == brute_force(ALTER_BF, "alterTable", depth, quota)
    # 3 modes x 2 ignore x quota repeats x 2 partitions
    assert len(got) == 3 * 2 * quota * 2


def test_enumeration_traces_replay():
    g = parse_grammar(TOYS[3][0])
    cfg = ExpansionConfig(max_depth=4, default_quota=2)
    for t in enumerate_all(g, "q", cfg):
        assert replay_trace(g, "q", t.derivation_trace, cfg).text == t.text


def test_budget_exceeded():
    g = parse_grammar(TOYS[3][0])
    with pytest.raises(BudgetExceeded):
        enumerate_all(g, "q", ExpansionConfig(max_depth=6, default_quota=3), cap=10)


def test_depth_exhausted_on_mandatory_cycle():
    g = parse_grammar("s : A s ;")
    with pytest.raises(DepthExhausted):
        expand(g, "s", ExpansionConfig(max_depth=5), random.Random(0))


def test_expand_deterministic_for_seed():
    d = load_dialect("sqlite")
    g = load_grammar(d.grammar, d.leaf_set, d.start_symbols)
    a = expand_batch(g, d.start_symbols, ExpansionConfig(), random.Random(42), 20)
    b = expand_batch(g, d.start_symbols, ExpansionConfig(), random.Random(42), 20)
    assert [t.text for t in a] == [t.text for t in b]
    with pytest.raises(ValueError):
        expand_batch(g, d.start_symbols, ExpansionConfig(), random.Random(0), 0)


def test_optional_probability_extremes():
    g = parse_grammar("s : A B? ;")
    assert expand(g, "s", ExpansionConfig(optional_probability=0.0), random.Random(1)).text == "A"
    assert expand(g, "s", ExpansionConfig(optional_probability=1.0), random.Random(1)).text == "A B"


_SQLITE = None


def _sqlite_grammar():
    global _SQLITE
    if _SQLITE is None:
        d = load_dialect("sqlite")
        _SQLITE = load_grammar(d.grammar, d.leaf_set, d.start_symbols)
    return _SQLITE


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(2, 8), quota=st.integers(1, 4))
def test_expansion_bounds_and_replay_property(seed, depth, quota):
    g = _sqlite_grammar()
    cfg = ExpansionConfig(max_depth=depth, default_quota=quota)
    try:
        t = expand(g, "sqlStatement", cfg, random.Random(seed))
    except DepthExhausted:
        return
    text, measured, usage, repeats = walk_trace(g, "sqlStatement", t.derivation_trace)
    assert text == t.text
    assert measured == t.depth <= depth
    assert all(v <= quota for v in usage.values())
    assert all(v <= quota for v in repeats.values())
    assert set(t.placeholders) <= set(g.leaf_set)
    assert replay_trace(g, "sqlStatement", t.derivation_trace, cfg).text == t.text
