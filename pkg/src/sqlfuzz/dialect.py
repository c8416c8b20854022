"""Per-dialect data: type pools, literal tables, grammar wiring and setting defaults."""

from __future__ import annotations

import functools
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

__all__ = ["TypeSpec", "SettingSpec", "Dialect", "UnknownDialect", "load_dialect", "available_dialects"]


class UnknownDialect(KeyError):
    pass


@dataclass(frozen=True)
class TypeSpec:
    name: str
    literal: str
    keyable: bool = True
    defaultable: bool = True

    @property
    def enum_values(self) -> List[str]:
        m = re.match(r"^\s*(?:ENUM|SET)\s*\((.*)\)\s*$", self.name, re.IGNORECASE)
        if not m:
            return []
        return re.findall(r"'(?:[^']|'')*'", m.group(1))


@dataclass(frozen=True)
class SettingSpec:
    name: str
    default: str
    min: Optional[float] = None
    max: Optional[float] = None


@dataclass(frozen=True)
class Dialect:
    name: str
    display_name: str
    grammar: str
    start_symbols: Tuple[str, ...]
    leaf_set: Tuple[str, ...]
    types: Tuple[TypeSpec, ...]
    literals: Mapping[str, Tuple[str, ...]]
    geometry_constructor: str = ""
    fill: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    settings: Mapping[str, SettingSpec] = field(default_factory=dict)

    @property
    def type_names(self) -> List[str]:
        return [t.name for t in self.types]

    def type_spec(self, name: str) -> Optional[TypeSpec]:
        for t in self.types:
            if t.name.upper() == name.upper():
                return t
        return None

    def geometry_literal(self, wkt: str) -> str:
        if not self.geometry_constructor:
            raise ValueError(f"dialect {self.name} has no geometry constructor")
        return self.geometry_constructor.format(wkt=wkt)


def _from_mapping(data: Mapping) -> Dialect:
    types = tuple(
        TypeSpec(t["name"], t["literal"], bool(t.get("keyable", True)), bool(t.get("defaultable", True)))
        for t in data.get("types", [])
    )
    if not types:
        raise ValueError(f"dialect {data.get('name')!r} has an empty type pool")
    settings = {
        k: SettingSpec(k, str(v["default"]), v.get("min"), v.get("max")) for k, v in data.get("settings", {}).items()
    }
    return Dialect(
        name=data["name"],
        display_name=data.get("display_name", data["name"]),
        grammar=data.get("grammar", data["name"]),
        start_symbols=tuple(data.get("start_symbols", ())),
        leaf_set=tuple(data.get("leaf_set", ())),
        types=types,
        literals={k: tuple(v) for k, v in data.get("literals", {}).items()},
        geometry_constructor=data.get("geometry_constructor", ""),
        fill={k: tuple(v) for k, v in data.get("fill", {}).items()},
        settings=settings,
    )


def available_dialects() -> List[str]:
    root = resources.files("sqlfuzz.data.dialects")
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


@functools.lru_cache(maxsize=None)
def load_dialect(name_or_path: str) -> Dialect:
    """Load a bundled dialect by id, or a dialect TOML file by path."""
    path = Path(name_or_path)
    if path.suffix == ".toml" and path.exists():
        with open(path, "rb") as fh:
            return _from_mapping(tomllib.load(fh))
    res = resources.files("sqlfuzz.data.dialects") / f"{name_or_path}.toml"
    if not res.is_file():
        raise UnknownDialect(name_or_path)
    with res.open("rb") as fh:
        return _from_mapping(tomllib.load(fh))
