"""The campaign loop.

One thread owns the driver, the execution history and the seed pool. Each
iteration picks generation (fresh schema + grammar templates + model
instantiation) or mutation (two pool seeds through :func:`mutate`), runs the
repair loop against the target, gates the final case on coverage novelty and
hands crashes to validation and reduction before resuming.

Instantiation requests are prefetched by a small worker pool. Jobs are built
on the loop thread from a dedicated generator RNG, in order, and consumed in
FIFO order, so the stream of generated cases does not depend on timing. An
order-sensitive (scripted) mock disables prefetching: its answers depend on
call order, which must then follow the loop exactly.
"""

from __future__ import annotations

import collections
import json
import logging
import random
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Tuple

from . import sqltext
from .config import CampaignConfig
from .dialect import Dialect
from .executor.coverage import is_interesting
from .executor.drivers import Driver, TargetConfig, make_driver
from .executor.outcome import CrashEvidence, ExecutionOutcome
from .grammar import Grammar, SqlTemplate, expand_batch, load_grammar
from .llm import (
    HttpChatClient,
    MockClient,
    ModelError,
    NoJsonArray,
    Prompt,
    build_instantiation_prompt,
    parse_sql_array,
)
from .mutation import load_rewrite_rules, mutate
from .reduction import (
    CrashClass,
    ExecutionHistory,
    PocReport,
    record_history,
    reduce,
    validate_crash,
)
from .repair import load_classifier, repair_loop, tag_errors
from .schema import SchemaContext, generate_schema, register
from .testcase import TestCase

log = logging.getLogger(__name__)

__all__ = [
    "InsufficientSeeds",
    "PoolEntry",
    "SeedPool",
    "select_parents",
    "CampaignStats",
    "GenerationJob",
    "build_client",
    "run_campaign",
]


class InsufficientSeeds(ValueError):
    """Mutation needs two distinct pool entries."""


# --------------------------------------------------------------------------
# seed pool

@dataclass(frozen=True)
class PoolEntry:
    case: TestCase
    new_edges: int
    admitted_at: int  # campaign case index
    crash_adjacent: bool = False


@dataclass
class SeedPool:
    """Interesting cases kept as mutation parents.

    With a ``capacity``, admitting past the cap evicts the entry with the
    fewest new edges at admission (the oldest among ties).
    """

    capacity: Optional[int] = None
    entries: List[PoolEntry] = field(default_factory=list)
    admitted: int = 0  # total admissions, monotone

    def __len__(self) -> int:
        return len(self.entries)

    def admit(self, case: TestCase, new_edges: int, index: int, crash_adjacent: bool = False) -> PoolEntry:
        if new_edges <= 0 and not crash_adjacent:
            raise ValueError("only interesting cases may enter the pool")
        entry = PoolEntry(case, new_edges, index, crash_adjacent)
        self.entries.append(entry)
        self.admitted += 1
        if self.capacity is not None and len(self.entries) > self.capacity:
            victim = min(range(len(self.entries)), key=lambda k: (self.entries[k].new_edges, k))
            del self.entries[victim]
        return entry


def select_parents(pool: SeedPool, rng: random.Random) -> Tuple[TestCase, TestCase]:
    """Two distinct entries, uniformly at random, in random order."""
    if len(pool) < 2:
        raise InsufficientSeeds(f"pool holds {len(pool)} entries; mutation needs 2")
    i, j = rng.sample(range(len(pool)), 2)
    return pool.entries[i].case, pool.entries[j].case


# --------------------------------------------------------------------------
# statistics

@dataclass
class CampaignStats:
    """Campaign counters. Every field except the timing ones only grows."""

    cases_executed: int = 0
    generation_cases: int = 0
    mutation_cases: int = 0
    executions: int = 0  # target runs, repair re-executions included
    statements_executed: int = 0
    errors_by_category: Dict[str, int] = field(default_factory=dict)
    repairs_attempted: int = 0
    repairs_succeeded: int = 0
    model_calls: int = 0
    model_errors: int = 0
    coverage: int = 0
    coverage_trace: List[int] = field(default_factory=list)  # coverage after each case
    pool_admissions: int = 0
    crashes_by_key: Dict[str, int] = field(default_factory=dict)
    hangs: int = 0
    pocs_emitted: int = 0
    poc_keys: List[str] = field(default_factory=list)
    elapsed_seconds: float = 0.0
    throughput_cases_per_min: float = 0.0

    TIMING = ("elapsed_seconds", "throughput_cases_per_min")

    def deterministic(self) -> dict:
        """All fields that must agree between two runs with the same seed."""
        d = asdict(self)
        for k in self.TIMING:
            d.pop(k)
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_text(self) -> str:
        lines = [
            f"cases executed      {self.cases_executed} ({self.generation_cases} generated, {self.mutation_cases} mutated)",
            f"target executions   {self.executions}",
            f"statements          {self.statements_executed}",
            f"coverage            {self.coverage}",
            f"pool admissions     {self.pool_admissions}",
            f"repairs             {self.repairs_succeeded}/{self.repairs_attempted} model repairs usable",
            f"model calls         {self.model_calls} ({self.model_errors} failed)",
            f"crashes             {sum(self.crashes_by_key.values())} ({len(self.crashes_by_key)} unique, {self.hangs} hangs)",
            f"PoCs emitted        {self.pocs_emitted}",
            f"elapsed             {self.elapsed_seconds:.1f}s ({self.throughput_cases_per_min:.1f} cases/min)",
            "errors by category:",
        ]
        for k in sorted(self.errors_by_category):
            lines.append(f"  {k:<24}{self.errors_by_category[k]}")
        return "\n".join(lines) + "\n"


class StatsWriter:
    """Newline-delimited JSON events."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", encoding="utf-8")

    def event(self, kind: str, **payload) -> None:
        self._fh.write(json.dumps({"event": kind, **payload}, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


# --------------------------------------------------------------------------
# generation jobs

@dataclass
class GenerationJob:
    index: int
    schema: List[str]
    context: SchemaContext
    templates: List[SqlTemplate]
    prompt: Prompt


def build_client(config: CampaignConfig, dialect: Dialect):
    m = config.model
    if m.client == "mock":
        return MockClient(m.mock_script, dialect)
    import os

    return HttpChatClient(m.params.endpoint, m.params.model_name, os.environ.get(m.api_key_env))


class _Generator:
    """Builds generation jobs in a fixed order and prefetches their model answers."""

    def __init__(self, config: CampaignConfig, dialect: Dialect, grammar: Grammar, client, rng: random.Random):
        self.config = config
        self.dialect = dialect
        self.grammar = grammar
        self.client = client
        self.rng = rng
        self.starts = list(config.start_symbols or grammar.start_symbols)
        self.made = 0
        depth = 0 if getattr(client, "order_sensitive", False) else config.model.params.concurrency
        self.depth = depth
        self.pool = ThreadPoolExecutor(max_workers=depth, thread_name_prefix="prefetch") if depth else None
        self.queue: Deque[Tuple[GenerationJob, Future]] = collections.deque()

    def _make_job(self) -> GenerationJob:
        schema, ctx = generate_schema(self.dialect, self.config.schema, self.rng)
        lo, hi = self.config.schedule.templates_per_case
        templates = expand_batch(self.grammar, self.starts, self.config.expansion, self.rng, self.rng.randint(lo, hi))
        prompt = build_instantiation_prompt(ctx, templates, self.dialect, self.config.model.params.max_context_tokens)
        job = GenerationJob(self.made, list(schema), ctx, templates, prompt)
        self.made += 1
        return job

    def _ask(self, prompt: Prompt) -> str:
        return self.client.complete(prompt, self.config.model.params)

    def _fill(self) -> None:
        while len(self.queue) < self.depth:
            job = self._make_job()
            self.queue.append((job, self.pool.submit(self._ask, job.prompt)))

    def next(self) -> Tuple[GenerationJob, Optional[str], Optional[Exception]]:
        """The next job with the model's answer (or the error it raised)."""
        if self.pool is None:
            job = self._make_job()
            try:
                return job, self._ask(job.prompt), None
            except ModelError as exc:
                return job, None, exc
        self._fill()
        job, fut = self.queue.popleft()
        self._fill()
        try:
            return job, fut.result(), None
        except ModelError as exc:
            return job, None, exc

    def close(self) -> None:
        if self.pool is not None:
            for _, fut in self.queue:
                fut.cancel()
            self.pool.shutdown(wait=True, cancel_futures=True)


def _context_for(case: TestCase) -> SchemaContext:
    ctx = SchemaContext()
    for s in case.schema_part:
        ctx, _ = register(ctx, s.text)
    return ctx


def _instantiated(answer: str) -> List[str]:
    out: List[str] = []
    for element in parse_sql_array(answer):
        # one array element may carry several statements
        out.extend(sqltext.split_statements(element) or [element])
    return out


# --------------------------------------------------------------------------
# the campaign

class Campaign:
    def __init__(
        self,
        config: CampaignConfig,
        driver: Optional[Driver] = None,
        client=None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.config = config
        self.dialect = config.dialect_profile
        grammar_name = config.grammar or self.dialect.grammar
        leaf = config.leaf_set if config.leaf_set is not None else self.dialect.leaf_set
        starts = config.start_symbols or self.dialect.start_symbols
        self.grammar = load_grammar(grammar_name, leaf, starts)
        self.table = load_classifier(self.dialect)
        self.rules = load_rewrite_rules(config.rewrite_rules)
        self.client = client if client is not None else build_client(config, self.dialect)
        self.driver = driver if driver is not None else make_driver(config.target)
        self.clock = clock
        self.out = Path(config.output)
        self.rng = random.Random(config.seed)
        self.gen = _Generator(config, self.dialect, self.grammar, self.client, random.Random(f"{config.seed}:generation"))
        self.pool = SeedPool(config.schedule.pool_capacity)
        self.history = ExecutionHistory()
        self.stats = CampaignStats()
        self.degraded = False
        self._since_retry = 0
        self.oracle = None

    # -- scheduling --------------------------------------------------------
    def choose(self) -> str:
        sched = self.config.schedule
        if len(self.pool) < 2:
            return "generation"
        if self.degraded:
            self._since_retry += 1
            if self._since_retry >= self.config.model.retry_interval:
                self._since_retry = 0
                return "generation"
            return "mutation"
        if len(self.pool) < sched.warmup_pool:
            return "generation"
        return "generation" if self.rng.random() < sched.generation_ratio else "mutation"

    def generate(self) -> Tuple[TestCase, SchemaContext]:
        job, answer, err = self.gen.next()
        self.stats.model_calls += 1
        stmts: List[str] = []
        if err is None:
            try:
                stmts = _instantiated(answer)
            except NoJsonArray as exc:
                err = exc
        if err is not None:
            self.stats.model_errors += 1
            if not self.degraded:
                log.warning("model instantiation failed (%s); continuing in mutation-only mode", err)
            self.degraded = True
            self._since_retry = 0
        elif self.degraded:
            log.warning("model answered again; leaving mutation-only mode")
            self.degraded = False
        ctx = job.context
        for s in stmts:
            ctx, _ = register(ctx, s)
        return TestCase.from_statements(job.schema + stmts, lineage=(f"gen:{job.index}",)), ctx

    def mutate(self) -> Tuple[TestCase, SchemaContext]:
        p1, p2 = select_parents(self.pool, self.rng)
        child = mutate(p1, p2, self.config.mutation, self.dialect.name, self.rng, self.rules)
        return child, _context_for(child)

    # -- execution ---------------------------------------------------------
    def _execute(self, case: TestCase, acc: dict) -> ExecutionOutcome:
        outcome = self.driver.run_case(case, self.oracle)
        record_history(self.history, case, outcome)
        st = self.stats
        st.executions += 1
        st.statements_executed += outcome.executed
        for r in tag_errors(outcome, case, self.table):
            st.errors_by_category[r.category.value] = st.errors_by_category.get(r.category.value, 0) + 1
        acc["new_edges"] += outcome.coverage_new_edges
        return outcome

    def run_one(self, index: int, writer: Optional[StatsWriter]) -> None:
        mode = self.choose()
        if mode == "mutation":
            case, ctx = self.mutate()
            self.stats.mutation_cases += 1
        else:
            case, ctx = self.generate()
            self.stats.generation_cases += 1
        acc = {"new_edges": 0}
        res = repair_loop(
            case,
            lambda c: self._execute(c, acc),
            self.table,
            self.client,
            ctx,
            self.config.max_rounds,
            self.dialect,
            self.config.model.params,
        )
        st = self.stats
        st.cases_executed += 1
        st.repairs_attempted += res.attempts
        st.repairs_succeeded += res.successes
        st.model_calls += res.model_calls
        st.model_errors += res.attempts - res.successes
        outcome = res.outcome
        gated = ExecutionOutcome(outcome.per_statement, outcome.crash, acc["new_edges"], outcome.session_generation)
        admitted = False
        # a crash counts as interesting once per dedup key; repeats of a known
        # crash would otherwise flood the pool with the same failure
        new_crash = outcome.crash is not None and outcome.crash.dedup_key not in st.crashes_by_key
        if not new_crash:
            gated.crash = None
        if res.case.statements and is_interesting(gated):
            self.pool.admit(res.case, acc["new_edges"], index, crash_adjacent=new_crash)
            st.pool_admissions += 1
            admitted = True
        if outcome.crash is not None:
            self.handle_crash(res.case, outcome.crash, index)
        st.coverage = self.oracle.covered
        st.coverage_trace.append(st.coverage)
        if writer is not None and self.config.log_cases:
            writer.event(
                "case", index=index, mode=mode, case_id=res.case.case_id, statements=len(res.case),
                rounds=res.rounds, new_edges=acc["new_edges"], admitted=admitted, coverage=st.coverage,
                crash=outcome.crash.dedup_key if outcome.crash else None,
            )

    # -- crashes -----------------------------------------------------------
    def handle_crash(self, case: TestCase, evidence: CrashEvidence, index: int) -> None:
        st = self.stats
        key = evidence.dedup_key
        first = key not in st.crashes_by_key
        st.crashes_by_key[key] = st.crashes_by_key.get(key, 0) + 1
        if evidence.is_hang:
            st.hangs += 1
        if not first:
            log.info("crash %s seen again (case %d)", key, index)
            return
        history = ExecutionHistory(list(self.history.entries), list(self.history.boundaries),
                                   list(self.history.case_ids), self.history.generation)
        crash_dir = self.out / "crashes" / key
        crash_dir.mkdir(parents=True, exist_ok=True)
        (crash_dir / "case.sql").write_text(case.to_sql())
        (crash_dir / "history.sql").write_text(
            PocReport(history.entries, CrashClass.StateDependent, evidence,
                      segments=[s for s, _ in history.items()]).to_sql()
        )
        (crash_dir / "target.json").write_text(json.dumps(_target_json(self.config.target), indent=2) + "\n")
        log.warning("%s %s at case %d; validating", evidence.kind, key, index)
        cls = validate_crash(case, history, self.driver, evidence)
        reduce_it = self.config.reduce_crashes and (not evidence.is_hang or self.config.reduce_hangs)
        if cls is CrashClass.NonReproducible or not reduce_it:
            items = [(0, t) for t in case.texts] if cls is not CrashClass.StateDependent else history.items()
            report = PocReport([t for _, t in items], cls, evidence, segments=[s for s, _ in items],
                               original_case_id=case.case_id, original_size=len(items),
                               reproduced=cls is not CrashClass.NonReproducible, one_minimal=False)
        else:
            source = case if cls is CrashClass.Isolated else history
            report = reduce(source, self.driver, evidence, cls, case.case_id)
        report.write(crash_dir)
        st.pocs_emitted += 1
        st.poc_keys.append(key)
        # validation restarted the target; the live session starts over
        self.history.clear(self.driver.session_generation)
        log.warning("%s %s classified %s; PoC with %d statements in %s",
                    evidence.kind, key, cls.value, len(report.statements), crash_dir)

    # -- the loop ----------------------------------------------------------
    def run(self) -> CampaignStats:
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        writer = StatsWriter(self.out / "stats.ndjson")
        started = self.clock()
        deadline = started + cfg.budget
        try:
            if not getattr(self.driver, "_started", False):
                self.driver.start()
            self.oracle = self.driver.make_oracle()
            writer.event("start", seed=cfg.seed, dialect=self.dialect.name, budget=cfg.budget,
                         max_cases=cfg.max_cases, target=" ".join(cfg.target.command),
                         coverage=getattr(self.oracle, "kind", "behavioral"))
            index = 0
            while self.clock() < deadline and (cfg.max_cases is None or index < cfg.max_cases):
                self.run_one(index, writer)
                index += 1
                if index % cfg.stats_interval == 0:
                    self._timing(started)
                    writer.event("progress", **self.stats.to_dict() | {"coverage_trace": None})
            self._timing(started)
            writer.event("summary", **self.stats.to_dict())
        finally:
            writer.close()
            self.gen.close()
            try:
                self.driver.close() if hasattr(self.driver, "close") else self.driver.stop()
            except Exception:  # pragma: no cover - best effort shutdown
                log.exception("error while stopping the target")
        (self.out / "summary.json").write_text(json.dumps(self.stats.to_dict(), indent=2, sort_keys=True) + "\n")
        (self.out / "summary.txt").write_text(self.stats.summary_text())
        return self.stats

    def _timing(self, started: float) -> None:
        el = max(self.clock() - started, 1e-9)
        self.stats.elapsed_seconds = el
        self.stats.throughput_cases_per_min = self.stats.cases_executed / (el / 60.0)


def _target_json(t: TargetConfig) -> dict:
    return {
        "command": list(t.command),
        "kind": t.kind.value,
        "prelude": t.prelude,
        "statement_timeout": t.statement_timeout,
        "startup_timeout": t.startup_timeout,
        "coverage": t.coverage,
        "env": dict(t.env),
        "database": t.database,
    }


def run_campaign(
    config: CampaignConfig,
    driver: Optional[Driver] = None,
    client=None,
    clock: Callable[[], float] = time.monotonic,
) -> CampaignStats:
    """Fuzz until the budget (or ``max_cases``) runs out; returns the final stats."""
    return Campaign(config, driver, client, clock).run()
