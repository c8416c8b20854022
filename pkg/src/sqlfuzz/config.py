"""Campaign configuration, read from a TOML document.

Every field has a default, so the smallest useful file is just a target::

    [target]
    command = ["sqlite3"]
    kind = "embedded"

See ``configs/sqlite.toml`` in the repository for a fully commented example.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .dialect import Dialect, load_dialect
from .executor.drivers import DriverKind, TargetConfig
from .grammar import ExpansionConfig
from .llm import ModelParams
from .mutation import MutationConfig
from .schema import SchemaConfig

__all__ = ["parse_duration", "ScheduleConfig", "ModelConfig", "CampaignConfig", "load_config"]

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|m|min|h|d)?\s*$", re.IGNORECASE)
_UNITS = {None: 1.0, "ms": 0.001, "s": 1.0, "m": 60.0, "min": 60.0, "h": 3600.0, "d": 86400.0}


def parse_duration(value: Union[str, int, float]) -> float:
    """Seconds in ``value`` -- a number of seconds or ``"90s"``, ``"10m"``, ``"2h"``."""
    if isinstance(value, (int, float)):
        if value < 0:
            raise ValueError("durations must be non-negative")
        return float(value)
    total, rest = 0.0, value.strip()
    # allow compound forms like "1h30m"
    for num, unit in re.findall(r"(\d+(?:\.\d+)?)\s*(ms|s|min|m|h|d)?", rest, re.IGNORECASE):
        total += float(num) * _UNITS[unit.lower() if unit else None]
    if not re.fullmatch(r"(?:\s*\d+(?:\.\d+)?\s*(?:ms|s|min|m|h|d)?)+\s*", rest, re.IGNORECASE):
        raise ValueError(f"cannot parse duration {value!r}")
    return total


@dataclass(frozen=True)
class ScheduleConfig:
    generation_ratio: float = 0.3  # share of generation once the pool is warm
    warmup_pool: int = 10  # generation only until the pool holds this many seeds
    templates_per_case: Tuple[int, int] = (3, 6)
    pool_capacity: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.generation_ratio <= 1.0:
            raise ValueError("generation_ratio must lie in [0, 1]")
        lo, hi = self.templates_per_case
        if not 1 <= lo <= hi:
            raise ValueError("templates_per_case must satisfy 1 <= lo <= hi")
        if self.pool_capacity is not None and self.pool_capacity < 2:
            raise ValueError("pool_capacity must be >= 2")


@dataclass(frozen=True)
class ModelConfig:
    """Which client answers prompts: ``"rules"`` mock, a mock script path, or an HTTP endpoint."""

    client: str = "mock"  # mock | http
    mock_script: Optional[str] = None  # JSON script; None = rule-based mock
    api_key_env: str = "SQLFUZZ_API_KEY"
    params: ModelParams = field(default_factory=ModelParams)
    retry_interval: int = 25  # cases between model retries while degraded

    def __post_init__(self):
        if self.client not in ("mock", "http"):
            raise ValueError(f"unknown model client {self.client!r}")


@dataclass(frozen=True)
class CampaignConfig:
    target: TargetConfig
    dialect: str = "sqlite"
    grammar: Optional[str] = None  # shipped name or path; default from the dialect
    leaf_set: Optional[Tuple[str, ...]] = None
    start_symbols: Optional[Tuple[str, ...]] = None
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    max_rounds: int = 3
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    budget: float = 600.0  # seconds of wall-clock time
    max_cases: Optional[int] = None
    output: str = "fuzz-out"
    seed: int = 0
    stats_interval: int = 25  # cases between progress events
    log_cases: bool = True  # one NDJSON event per case
    reduce_crashes: bool = True
    reduce_hangs: bool = False
    rewrite_rules: Optional[str] = None

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.max_cases is not None and self.max_cases < 0:
            raise ValueError("max_cases must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        load_dialect(self.dialect)  # raises UnknownDialect

    @property
    def dialect_profile(self) -> Dialect:
        return load_dialect(self.dialect)

    def with_overrides(self, **kw) -> "CampaignConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _section(data: Mapping, name: str) -> Dict[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, Mapping):
        raise ValueError(f"[{name}] must be a table")
    return dict(value)


def _known(cls, data: Mapping, where: str) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return dict(data)


def _resolve(path: Optional[str], base: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    if p.is_absolute() or "/" not in path and not path.endswith((".g4", ".json", ".toml")):
        return path
    return str((base / p).resolve())


def config_from_mapping(data: Mapping, base_dir: Union[str, Path] = ".") -> CampaignConfig:
    base = Path(base_dir)
    data = dict(data)
    target_raw = _section(data, "target")
    if not target_raw:
        raise ValueError("the [target] table is required")
    target = TargetConfig.from_mapping(target_raw, base)

    grammar_raw = _section(data, "grammar")
    exp_raw = _known(ExpansionConfig, _section(data, "expansion"), "expansion")
    schema_raw = _known(SchemaConfig, _section(data, "schema"), "schema")
    for k in ("tables", "columns", "rows", "views"):
        if k in schema_raw:
            schema_raw[k] = tuple(schema_raw[k])
    if "type_pool" in schema_raw and schema_raw["type_pool"] is not None:
        schema_raw["type_pool"] = tuple(schema_raw["type_pool"])
    mut_raw = _known(MutationConfig, _section(data, "mutation"), "mutation")
    sched_raw = _known(ScheduleConfig, _section(data, "schedule"), "schedule")
    if "templates_per_case" in sched_raw:
        sched_raw["templates_per_case"] = tuple(sched_raw["templates_per_case"])
    model_raw = _section(data, "model")
    repair_raw = _section(data, "repair")
    camp_raw = _section(data, "campaign")

    param_keys = {f.name for f in fields(ModelParams)}
    params = ModelParams(**{k: v for k, v in model_raw.items() if k in param_keys})
    mock = model_raw.get("mock")
    model = ModelConfig(
        client=model_raw.get("client", "mock"),
        mock_script=None if mock in (None, "rules") else _resolve(mock, base),
        api_key_env=model_raw.get("api_key_env", "SQLFUZZ_API_KEY"),
        params=params,
        retry_interval=int(model_raw.get("retry_interval", 25)),
    )
    extra = set(model_raw) - param_keys - {"client", "mock", "api_key_env", "retry_interval"}
    if extra:
        raise ValueError(f"unknown keys in [model]: {sorted(extra)}")

    top = {k: v for k, v in data.items() if not isinstance(v, Mapping)}
    kw: Dict[str, Any] = {}
    if "dialect" in top:
        kw["dialect"] = top.pop("dialect")
    if "seed" in top:
        kw["seed"] = int(top.pop("seed"))
    if "budget" in top:
        kw["budget"] = parse_duration(top.pop("budget"))
    if "output" in top:
        kw["output"] = _resolve(str(top.pop("output")), base) if "/" in str(data["output"]) else str(top.pop("output"))
    if top:
        raise ValueError(f"unknown top-level keys: {sorted(top)}")
    for k, v in camp_raw.items():
        if k == "budget":
            v = parse_duration(v)
        if k not in {f.name for f in fields(CampaignConfig)}:
            raise ValueError(f"unknown key in [campaign]: {k}")
        kw[k] = v
    return CampaignConfig(
        target=target,
        grammar=_resolve(grammar_raw.get("path"), base),
        leaf_set=tuple(grammar_raw["leaf_set"]) if "leaf_set" in grammar_raw else None,
        start_symbols=tuple(grammar_raw["start_symbols"]) if "start_symbols" in grammar_raw else None,
        expansion=ExpansionConfig(**exp_raw),
        schema=SchemaConfig(**schema_raw),
        mutation=MutationConfig(**mut_raw),
        max_rounds=int(repair_raw.get("max_rounds", 3)),
        model=model,
        schedule=ScheduleConfig(**sched_raw),
        rewrite_rules=_resolve(_section(data, "mutation_rules").get("path"), base) if "mutation_rules" in data else None,
        **kw,
    )


def load_config(path: Union[str, Path]) -> CampaignConfig:
    p = Path(path)
    with open(p, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_mapping(data, p.parent)
