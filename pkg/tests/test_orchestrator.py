"""Seed pool, parent selection and the campaign loop (against the simulated target)."""

import collections
import json
import random

import pytest

from sqlfuzz.config import CampaignConfig, ModelConfig
from sqlfuzz.executor.drivers import TargetConfig
from sqlfuzz.executor.simulated import CrashRule, SimulatedDriver
from sqlfuzz.llm import MockClient, UnreachableClient
from sqlfuzz.orchestrator import Campaign, InsufficientSeeds, SeedPool, run_campaign, select_parents
from sqlfuzz.reduction import load_poc
from sqlfuzz.testcase import TestCase


def _case(n: int) -> TestCase:
    return TestCase.from_statements([f"CREATE TABLE t{n} (c0 INT)", f"SELECT c0 FROM t{n}"])


def _config(tmp_path, name="out", **kw) -> CampaignConfig:
    kw.setdefault("max_cases", 40)
    kw.setdefault("budget", 300)
    return CampaignConfig(target=TargetConfig.sqlite_shell("sqlite3"), output=str(tmp_path / name), **kw)


# --------------------------------------------------------------------------
# pool

def test_pool_admits_only_interesting_cases():
    pool = SeedPool()
    with pytest.raises(ValueError):
        pool.admit(_case(0), 0, 0)
    pool.admit(_case(0), 3, 0)
    pool.admit(_case(1), 0, 1, crash_adjacent=True)
    assert len(pool) == 2 and pool.admitted == 2


def test_pool_capacity_evicts_least_novel_oldest_first():
    pool = SeedPool(capacity=3)
    for k, edges in enumerate([5, 1, 7, 1]):
        pool.admit(_case(k), edges, k)
    assert [e.admitted_at for e in pool.entries] == [0, 2, 3]  # the older 1-edge entry went
    pool.admit(_case(4), 9, 4)
    assert [e.admitted_at for e in pool.entries] == [0, 2, 4]
    assert pool.admitted == 5


def test_select_parents_uniform_and_distinct():
    pool = SeedPool()
    for k in range(5):
        pool.admit(_case(k), 1, k)
    rng = random.Random(11)
    pairs = collections.Counter()
    draws = 10_000
    for _ in range(draws):
        a, b = select_parents(pool, rng)
        assert a is not b
        pairs[(a.statements[0].text, b.statements[0].text)] += 1
    assert len(pairs) == 20  # every ordered pair of distinct entries
    expected = draws / 20
    for pair, n in pairs.items():
        assert abs(n - expected) <= 0.3 * expected, (pair, n)
    singles = collections.Counter()
    for (a, b), n in pairs.items():
        singles[a] += n
        singles[b] += n
    for n in singles.values():
        assert abs(n - 2 * draws / 5) <= 0.3 * (2 * draws / 5)


def test_select_parents_needs_two_seeds():
    pool = SeedPool()
    with pytest.raises(InsufficientSeeds):
        select_parents(pool, random.Random(0))
    pool.admit(_case(0), 1, 0)
    with pytest.raises(InsufficientSeeds):
        select_parents(pool, random.Random(0))


def test_schedule_falls_back_to_generation_with_small_pool(tmp_path):
    camp = Campaign(_config(tmp_path), driver=SimulatedDriver())
    assert all(camp.choose() == "generation" for _ in range(50))
    camp.pool.admit(_case(0), 1, 0)
    assert all(camp.choose() == "generation" for _ in range(50))


# --------------------------------------------------------------------------
# campaign loop

def _manual(camp: Campaign, n: int) -> None:
    camp.driver.start()
    camp.oracle = camp.driver.make_oracle()
    for i in range(n):
        camp.run_one(i, None)


def test_history_mirrors_what_was_sent(tmp_path):
    drv = SimulatedDriver()
    camp = Campaign(_config(tmp_path), driver=drv)
    _manual(camp, 30)
    sent = [s for s in drv.send_log if not s.startswith(".open")]
    assert camp.history.entries == sent
    assert len(camp.history.segments()) == camp.stats.executions
    camp.gen.close()


def test_campaign_smoke_outputs_and_monotone_stats(tmp_path):
    stats = run_campaign(_config(tmp_path, max_cases=60, seed=5), driver=SimulatedDriver())
    assert stats.cases_executed == 60
    assert stats.generation_cases + stats.mutation_cases == 60
    assert stats.mutation_cases > 0
    assert stats.pool_admissions >= 5
    trace = stats.coverage_trace
    assert len(trace) == 60 and all(a <= b for a, b in zip(trace, trace[1:]))
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cases_executed"] == 60
    events = [json.loads(line) for line in (out / "stats.ndjson").read_text().splitlines()]
    assert events[0]["event"] == "start" and events[-1]["event"] == "summary"
    assert sum(e["event"] == "case" for e in events) == 60
    assert "cases executed" in (out / "summary.txt").read_text()


def test_same_seed_same_stats_rules_mock(tmp_path):
    a = run_campaign(_config(tmp_path, "a", seed=9), driver=SimulatedDriver())
    b = run_campaign(_config(tmp_path, "b", seed=9), driver=SimulatedDriver())
    assert a.deterministic() == b.deterministic()


def test_same_seed_same_stats_scripted_mock(tmp_path):
    script = {
        "instantiation": ['["SELECT c0 FROM t0", "SELECT * FROM nosuch"]', '["SELECT 1", "DELETE FROM t0"]'],
        "repair": ['["SELECT 1"]'],
    }

    def run(name):
        client = MockClient(script)
        assert client.order_sensitive
        return run_campaign(_config(tmp_path, name, seed=4), driver=SimulatedDriver(), client=client), client

    (a, ca), (b, cb) = run("a"), run("b")
    assert a.deterministic() == b.deterministic()
    assert ca.call_log == cb.call_log


def test_crash_found_validated_and_reduced(tmp_path):
    stats = run_campaign(_config(tmp_path, max_cases=80, seed=3), driver=SimulatedDriver([CrashRule(r"^\s*UPDATE")]))
    assert len(stats.crashes_by_key) == 1
    key, count = next(iter(stats.crashes_by_key.items()))
    assert stats.pocs_emitted == 1 and stats.poc_keys == [key]
    crash_dir = tmp_path / "out" / "crashes" / key
    items, meta = load_poc(crash_dir)
    assert meta["crash_class"] == "Isolated" and meta["reproduced"] and meta["one_minimal"]
    assert len(items) == 1 and items[0][1].lstrip().upper().startswith("UPDATE")
    for name in ("case.sql", "history.sql", "target.json", "reduction.log"):
        assert (crash_dir / name).exists()


def test_degraded_mode_keeps_mutating(tmp_path):
    client = UnreachableClient()
    cfg = _config(tmp_path, seed=2).with_overrides(model=ModelConfig(retry_interval=10))
    camp = Campaign(cfg, driver=SimulatedDriver(), client=client)
    for k in range(3):
        camp.pool.admit(_case(k), 1, k)
    _manual(camp, 40)
    st = camp.stats
    assert st.cases_executed == 40
    assert camp.degraded
    assert st.model_errors == st.generation_cases  # every consumed answer failed
    assert client.calls >= st.model_errors  # prefetch may ask ahead of consumption
    # one failed generation, then mutation with a retry every retry_interval cases
    assert st.generation_cases == 1 + (40 - 1) // 10
    assert st.mutation_cases == 40 - st.generation_cases
    camp.gen.close()


def test_unreachable_model_campaign_still_exits(tmp_path):
    stats = run_campaign(_config(tmp_path, max_cases=20), driver=SimulatedDriver(), client=UnreachableClient())
    assert stats.cases_executed == 20
    assert stats.model_errors == stats.model_calls == 20
