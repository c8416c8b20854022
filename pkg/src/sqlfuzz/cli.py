"""Command-line entry point: ``sqlfuzz fuzz|replay|reduce|expand``."""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path
from typing import List, Optional

from .config import load_config, parse_duration
from .executor.drivers import TargetConfig, make_driver

log = logging.getLogger("sqlfuzz")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _target_from(path: str) -> TargetConfig:
    p = Path(path)
    if p.suffix == ".json":
        return TargetConfig.from_mapping(json.loads(p.read_text()), p.parent)
    return load_config(p).target


# --------------------------------------------------------------------------
# subcommands

def cmd_fuzz(args) -> int:
    from dataclasses import replace

    from .config import ModelConfig
    from .orchestrator import run_campaign

    cfg = load_config(args.config)
    if args.mock is not None:
        script = None if args.mock == "rules" else str(Path(args.mock).resolve())
        cfg = replace(cfg, model=replace(cfg.model, client="mock", mock_script=script))
    cfg = cfg.with_overrides(budget=args.budget, seed=args.seed, output=args.out, max_cases=args.max_cases)
    stats = run_campaign(cfg)
    sys.stdout.write(stats.summary_text())
    print(f"output: {Path(cfg.output).resolve()}")
    return 0


def cmd_replay(args) -> int:
    from .reduction import replay, load_poc

    poc = Path(args.poc)
    items, meta = load_poc(poc)
    if args.target:
        target = _target_from(args.target)
    elif (poc / "target.json").exists():
        target = _target_from(str(poc / "target.json"))
    else:
        print("no target: pass --target or keep target.json next to the PoC", file=sys.stderr)
        return 2
    driver = make_driver(target)
    try:
        driver.start()
        outcome = replay(driver, items)
    finally:
        driver.close()
    expected = meta.get("dedup_key")
    if outcome.crash is None:
        print(f"not reproduced: {len(items)} statements ran without a crash")
        return 1
    same = expected is None or outcome.crash.dedup_key == expected
    print(f"reproduced {outcome.crash.kind} {outcome.crash.dedup_key} at statement {outcome.crash.trigger_index}"
          + ("" if same else f" (expected {expected})"))
    for line in outcome.crash.diagnostic_tail[-10:]:
        print("  " + line)
    return 0 if same else 1


def cmd_reduce(args) -> int:
    from .reduction import CrashClass, parse_poc_sql, reduce

    items = parse_poc_sql(Path(args.case).read_text())
    target = _target_from(args.target)
    driver = make_driver(target)
    out = Path(args.out) if args.out else Path(args.case).with_suffix(".reduced")
    try:
        from .reduction import replay

        driver.start()
        outcome = replay(driver, items)
        if outcome.crash is None:
            print("the case does not crash the target; nothing to reduce", file=sys.stderr)
            return 1
        cls = CrashClass.Isolated if len({s for s, _ in items}) <= 1 else CrashClass.StateDependent
        report = reduce(items, driver, outcome.crash, cls, original_case_id=Path(args.case).stem)
    finally:
        driver.close()
    report.write(out)
    print(f"{len(items)} -> {len(report.statements)} statements "
          f"(reproduced={report.reproduced}, 1-minimal={report.one_minimal}); written to {out}")
    sys.stdout.write(report.to_sql())
    return 0 if report.reproduced else 1


def cmd_expand(args) -> int:
    from .grammar import ExpansionConfig, expand_batch, load_grammar

    if args.leaf:
        leaf = [x.strip() for x in args.leaf.split(",") if x.strip()]
    else:
        # the leaf set of the dialect that ships this grammar, if any
        from .dialect import UnknownDialect, load_dialect

        try:
            leaf = list(load_dialect(args.dialect or Path(args.grammar).stem).leaf_set)
        except UnknownDialect:
            leaf = []
    grammar = load_grammar(args.grammar, leaf, [args.start])
    cfg = ExpansionConfig(max_depth=args.max_depth)
    for t in expand_batch(grammar, [args.start], cfg, random.Random(args.seed), args.n):
        print(t.text)
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqlfuzz", description="Grammar- and model-driven SQL fuzzer.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fuzz", help="run a fuzzing campaign")
    f.add_argument("--config", required=True, help="campaign TOML file")
    f.add_argument("--budget", type=_duration, help="wall-clock budget, e.g. 600, 90s, 10m")
    f.add_argument("--seed", type=_u64, help="RNG seed (unsigned 64-bit)")
    f.add_argument("--mock", help="answer prompts with a mock: 'rules' or a JSON script path")
    f.add_argument("--out", help="output directory")
    f.add_argument("--max-cases", type=int, help="stop after this many cases")
    f.set_defaults(func=cmd_fuzz)

    r = sub.add_parser("replay", help="replay a PoC directory against its target")
    r.add_argument("--poc", required=True, help="directory with poc.sql and meta.json")
    r.add_argument("--target", help="campaign TOML or target JSON (default: the PoC's target.json)")
    r.set_defaults(func=cmd_replay)

    d = sub.add_parser("reduce", help="minimise a crashing SQL file")
    d.add_argument("--case", required=True, help="SQL file ('-- @reset' lines separate cases)")
    d.add_argument("--target", required=True, help="campaign TOML or target JSON")
    d.add_argument("--out", help="output directory (default: <case>.reduced)")
    d.set_defaults(func=cmd_reduce)

    e = sub.add_parser("expand", help="print skeletal templates from a grammar")
    e.add_argument("--grammar", required=True, help="grammar file or shipped name (sqlite, mysql_subset)")
    e.add_argument("--start", required=True, help="start rule")
    e.add_argument("-n", type=int, default=10, help="number of templates")
    e.add_argument("--leaf", help="comma-separated leaf nonterminals (default: the dialect's leaf set)")
    e.add_argument("--dialect", help="take the leaf set from this dialect (default: the grammar's file stem)")
    e.add_argument("--max-depth", type=int, default=6)
    e.add_argument("--seed", type=_u64, default=0)
    e.set_defaults(func=cmd_expand)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except (ValueError, KeyError, OSError) as exc:
        # bad configuration or input files: report without a traceback
        log.debug("command failed", exc_info=True)
        print(f"sqlfuzz {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
