"""Declarative schema for control-plane (CP) and user-plane (UP) signalling records.

The default registry ships as ``data/schema.json``: 6 CP fields, 24 UP fields,
and three CP code pairs that are concatenated into derived fields.
"""
from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

from .errors import DomainViolation, UnknownField

SEPARATOR = "|"


class FieldKind(str, enum.Enum):
    ENUMERATED = "enumerated"
    NUMERIC = "numeric"


class Plane(str, enum.Enum):
    CP = "cp"
    UP = "up"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind
    plane: Plane
    domain: tuple[str, ...] = ()
    unit: str = ""
    labels: dict = field(default_factory=dict, compare=False, hash=False)
    nonnegative: bool = True

    def __post_init__(self):
        if self.kind is FieldKind.ENUMERATED:
            if not self.domain:
                raise ValueError(f"enumerated field {self.name!r} needs a domain")
            if len(set(self.domain)) != len(self.domain):
                raise ValueError(f"duplicate codes in domain of {self.name!r}")
            if any(SEPARATOR in c for c in self.domain):
                raise ValueError(f"code in {self.name!r} contains reserved {SEPARATOR!r}")
        elif self.domain:
            raise ValueError(f"numeric field {self.name!r} cannot have a domain")

    @property
    def is_enumerated(self) -> bool:
        return self.kind is FieldKind.ENUMERATED


@dataclass(frozen=True)
class DerivedFieldSpec:
    """Concatenation of two enumerated codes from the same plane."""

    name: str
    source_a: str
    source_b: str
    plane: Plane
    domain: tuple[str, ...]

    kind = FieldKind.ENUMERATED
    is_enumerated = True

    def decode(self, code: str) -> tuple[str, str]:
        if code not in self.domain:
            raise DomainViolation(f"{code!r} not in domain of {self.name}")
        a, b = code.split(SEPARATOR)
        return a, b


def combined_code(spec: DerivedFieldSpec, va: str, vb: str) -> str:
    """Join two source codes into the derived field's code, e.g. ("1", "0") -> "1|0"."""
    code = f"{va}{SEPARATOR}{vb}"
    if SEPARATOR in va or SEPARATOR in vb or code not in spec.domain:
        raise DomainViolation(f"({va!r}, {vb!r}) not in domain of {spec.name}")
    return code


def decode(spec: DerivedFieldSpec, code: str) -> tuple[str, str]:
    return spec.decode(code)


def render_code(code: str) -> str:
    """Report form of a code: separator stripped, so "1|0" reads "10"."""
    return code.replace(SEPARATOR, "")


@dataclass(frozen=True)
class SchemaRegistry:
    base: tuple[FieldSpec, ...]
    derived: tuple[DerivedFieldSpec, ...]
    version: str = "xdr-1"

    def __post_init__(self):
        names = [f.name for f in self.base] + [d.name for d in self.derived]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate field names: {sorted(dupes)}")
        by_name = {f.name: f for f in self.base}
        for d in self.derived:
            a, b = by_name.get(d.source_a), by_name.get(d.source_b)
            if a is None or b is None:
                raise ValueError(f"derived field {d.name!r} references unknown source")
            if not (a.is_enumerated and b.is_enumerated) or a.plane != b.plane or d.plane != a.plane:
                raise ValueError(f"derived field {d.name!r} needs two enumerated same-plane sources")
            for code in d.domain:
                va, _, vb = code.partition(SEPARATOR)
                if va not in a.domain or vb not in b.domain:
                    raise ValueError(f"derived code {code!r} outside source domains")

    def lookup(self, name: str) -> FieldSpec | DerivedFieldSpec:
        for spec in self.base:
            if spec.name == name:
                return spec
        for spec in self.derived:
            if spec.name == name:
                return spec
        raise UnknownField(f"unknown field {name!r}")

    def fields(self, plane: Plane | str | None = None) -> list[FieldSpec]:
        if plane is None:
            return list(self.base)
        plane = Plane(plane)
        return [f for f in self.base if f.plane is plane]

    def enumerated(self, plane: Plane | str | None = None) -> list[FieldSpec]:
        return [f for f in self.fields(plane) if f.is_enumerated]

    def numeric(self, plane: Plane | str | None = None) -> list[FieldSpec]:
        return [f for f in self.fields(plane) if not f.is_enumerated]

    def derived_for(self, plane: Plane | str) -> list[DerivedFieldSpec]:
        plane = Plane(plane)
        return [d for d in self.derived if d.plane is plane]

    def to_dict(self) -> dict:
        fields = []
        for f in self.base:
            entry = {"name": f.name, "kind": f.kind.value, "plane": f.plane.value}
            if f.is_enumerated:
                entry["domain"] = list(f.domain)
                if f.labels:
                    entry["labels"] = dict(f.labels)
            else:
                entry["unit"] = f.unit
            if not f.nonnegative:
                entry["nonnegative"] = False
            fields.append(entry)
        derived = [
            {"name": d.name, "source_a": d.source_a, "source_b": d.source_b, "domain": list(d.domain)}
            for d in self.derived
        ]
        return {"version": self.version, "fields": fields, "derived": derived}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> SchemaRegistry:
        base = tuple(
            FieldSpec(
                name=f["name"],
                kind=FieldKind(f["kind"]),
                plane=Plane(f["plane"]),
                domain=tuple(str(c) for c in f.get("domain", ())),
                unit=f.get("unit", ""),
                labels=dict(f.get("labels", {})),
                nonnegative=bool(f.get("nonnegative", True)),
            )
            for f in doc["fields"]
        )
        by_name = {f.name: f for f in base}
        derived = []
        for d in doc.get("derived", ()):
            a, b = by_name[d["source_a"]], by_name[d["source_b"]]
            domain = d.get("domain") or [f"{x}{SEPARATOR}{y}" for x in a.domain for y in b.domain]
            derived.append(DerivedFieldSpec(d["name"], a.name, b.name, a.plane, tuple(domain)))
        return cls(base=base, derived=tuple(derived), version=doc.get("version", "xdr-1"))

    @classmethod
    def from_json(cls, text: str) -> SchemaRegistry:
        return cls.from_dict(json.loads(text))


@functools.lru_cache(maxsize=1)
def default_schema() -> SchemaRegistry:
    text = resources.files("hotspot").joinpath("data/schema.json").read_text()
    return SchemaRegistry.from_json(text)


def lookup(registry: SchemaRegistry, name: str) -> FieldSpec | DerivedFieldSpec:
    return registry.lookup(name)


def code_index(spec: FieldSpec | DerivedFieldSpec) -> dict[str, int]:
    return {code: i for i, code in enumerate(spec.domain)}


def field_names(specs: Iterable[FieldSpec | DerivedFieldSpec]) -> list[str]:
    return [s.name for s in specs]
