# %% [markdown]
# # sqlfuzz walkthrough
#
# One pass through the pipeline: expand templates, instantiate them with the
# rule-based mock, repair, mutate, then find, classify and reduce a
# state-dependent crash. Runs as a script (`python notebooks/walkthrough.py`)
# or cell by cell in any `# %%`-aware editor. Needs no sqlite3 binary: the
# target is the in-process simulated driver.

# %%
import random

from sqlfuzz.dialect import load_dialect
from sqlfuzz.executor.simulated import CrashRule, SimulatedDriver
from sqlfuzz.grammar import ExpansionConfig, expand_batch, load_grammar
from sqlfuzz.llm import MockClient, ModelParams, build_instantiation_prompt, parse_sql_array
from sqlfuzz.mutation import MutationConfig, load_rewrite_rules, logic_shift, mutate
from sqlfuzz.reduction import CrashClass, ExecutionHistory, record_history, reduce, validate_crash
from sqlfuzz.repair import load_classifier, repair_loop
from sqlfuzz.schema import SchemaConfig, generate_schema
from sqlfuzz.testcase import TestCase

rng = random.Random(1)
dialect = load_dialect("sqlite")
grammar = load_grammar(dialect.grammar, dialect.leaf_set, dialect.start_symbols)

# %% [markdown]
# ## Templates and a schema

# %%
templates = expand_batch(grammar, dialect.start_symbols, ExpansionConfig(max_depth=5), rng, 4)
for t in templates:
    print("template:", t.text)
schema, ctx = generate_schema(dialect, SchemaConfig(), rng)
print("\n".join(schema))

# %% [markdown]
# ## Instantiation with the rule-based mock, then repair

# %%
client = MockClient(None, dialect)
prompt = build_instantiation_prompt(ctx, templates, dialect, 8192)
ops = parse_sql_array(client.complete(prompt, ModelParams()))
case = TestCase.from_statements(schema + ops)
print(case.to_sql())

driver = SimulatedDriver()
driver.start()
result = repair_loop(case, driver.run_case, load_classifier(dialect), client, ctx, 3, dialect)
print(f"converged={result.converged} rounds={result.rounds} dropped={result.dropped} "
      f"rule fixes={result.rule_fixes} model calls={result.model_calls}")

# %% [markdown]
# ## Mutation: crossover, drop filter, logic shifting

# %%
rules = load_rewrite_rules()
print(logic_shift("SELECT * FROM t0 LEFT JOIN t1 ON t0.c0 = t1.c0 WHERE t0.c1 IS NULL AND t1.c0 IN (1, 2);",
                  rules, "sqlite", MutationConfig(rewrite_probability=1.0), rng).text)
other = TestCase.from_statements(["CREATE TABLE t9 (c0 INT);", "INSERT INTO t9 VALUES (1);", "SELECT c0 FROM t9 WHERE c0 = 1;"])
child = mutate(result.case, other, MutationConfig(), "sqlite", rng, rules)
print(child.to_sql())

# %% [markdown]
# ## A state-dependent crash
#
# The scripted target crashes on `trigger_col` only after some earlier case
# created `armed_flag`. Replaying the crashing case alone does not reproduce
# it; replaying the history does, so the reduced PoC keeps the setter in its
# own case, separated by a reset marker.

# %%
target = SimulatedDriver([CrashRule(r"armed_flag", sets="armed", crash=False),
                          CrashRule(r"trigger_col", requires="armed")])
history = ExecutionHistory()
cases = [
    ["CREATE TABLE t0 (c0 INT);", "CREATE TABLE armed_flag (c0 INT);", "SELECT 1;"],
    ["CREATE TABLE t1 (c0 INT);", "SELECT 2;"],
    ["CREATE TABLE t2 (c0 INT);", "SELECT c0, 42 AS trigger_col FROM t2 WHERE c0 > 3;"],
]
with target:
    for texts in cases:
        tc = TestCase.from_statements(texts)
        outcome = target.run_case(tc)
        record_history(history, tc, outcome)
        if outcome.crash:
            break
    cls = validate_crash(tc, history, target, outcome.crash)
    print("classified:", cls.value)
    report = reduce(history, target, outcome.crash, cls)
print(report.to_sql())
print(f"{report.original_size} -> {len(report.statements)} statements, oracle calls {report.oracle_calls}")
assert cls is CrashClass.StateDependent
