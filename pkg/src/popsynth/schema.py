"""Attribute universe and per-source inventories.

A :class:`Schema` is the shared vocabulary of the whole pipeline: every
attribute's ordered states, its layer/type classification, and which data
source carries which attributes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import yaml

LAYERS = ("socio-demographic", "motivational")
ATTR_TYPES = {
    "socio-demographic": ("main", "household", "network"),
    "motivational": ("values", "ideologies", "opinions", "vital-priorities"),
}
SOURCE_KINDS = ("micro", "macro")


class SchemaError(ValueError):
    """Raised when a schema document is malformed or violates an invariant."""


@dataclass(frozen=True)
class AttributeDef:
    name: str
    states: tuple[str, ...]
    layer: str
    attr_type: str
    ordinal: bool = False
    territorial: bool = False

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def index(self, label: str) -> int:
        return self.states.index(label)

    def check(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise SchemaError(f"attribute name must be a non-empty string, got {self.name!r}")
        if len(self.states) < 2:
            raise SchemaError(f"attribute {self.name!r} needs at least 2 states")
        for s in self.states:
            if not isinstance(s, str) or s == "":
                raise SchemaError(
                    f"attribute {self.name!r}: state labels must be non-empty strings, got {s!r}"
                )
        if len(set(self.states)) != len(self.states):
            raise SchemaError(f"attribute {self.name!r} has duplicate states")
        if self.layer not in LAYERS:
            raise SchemaError(f"attribute {self.name!r}: unknown layer {self.layer!r}")
        if self.attr_type not in ATTR_TYPES[self.layer]:
            raise SchemaError(
                f"attribute {self.name!r}: type {self.attr_type!r} not valid for layer {self.layer!r}"
            )


@dataclass(frozen=True)
class DataSourceDescriptor:
    id: str
    kind: str
    attributes: tuple[str, ...]
    weight_column: Optional[str] = None
    is_richest: bool = False
    scope: str = ""
    year: Optional[int] = None

    @property
    def m(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class CoreSpec:
    core_attributes: tuple[str, ...]


@dataclass(frozen=True)
class Schema:
    attributes: tuple[AttributeDef, ...]
    sources: tuple[DataSourceDescriptor, ...]
    core: CoreSpec
    _by_name: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {a.name: a for a in self.attributes})
        validate_schema(self)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> AttributeDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown attribute {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def source(self, source_id: str) -> DataSourceDescriptor:
        for s in self.sources:
            if s.id == source_id:
                return s
        raise KeyError(f"unknown data source {source_id!r}")

    @property
    def richest(self) -> DataSourceDescriptor:
        return next(s for s in self.sources if s.is_richest)

    @property
    def territorial(self) -> Optional[str]:
        for a in self.attributes:
            if a.territorial:
                return a.name
        return None

    def states(self, names: Optional[Iterable[str]] = None) -> dict[str, tuple[str, ...]]:
        names = self.names if names is None else names
        return {n: self.attribute(n).states for n in names}

    def order(self, names: Iterable[str]) -> list[str]:
        """Return ``names`` sorted by declaration order in the schema."""
        pos = {n: i for i, n in enumerate(self.names)}
        return sorted(names, key=lambda n: pos[n])


def validate_schema(schema: Schema) -> None:
    """Check every invariant; raise :class:`SchemaError` naming the first violation."""
    seen = set()
    for a in schema.attributes:
        a.check()
        if a.name in seen:
            raise SchemaError(f"duplicate attribute {a.name!r}")
        seen.add(a.name)
    territorial = [a.name for a in schema.attributes if a.territorial]
    if len(territorial) > 1:
        raise SchemaError(f"more than one territorial attribute: {territorial}")

    if not schema.sources:
        raise SchemaError("schema declares no data sources")
    ids = set()
    for s in schema.sources:
        if s.id in ids:
            raise SchemaError(f"duplicate data source id {s.id!r}")
        ids.add(s.id)
        if s.kind not in SOURCE_KINDS:
            raise SchemaError(f"source {s.id!r}: unknown kind {s.kind!r}")
        if not s.attributes:
            raise SchemaError(f"source {s.id!r} lists no attributes")
        if len(set(s.attributes)) != len(s.attributes):
            raise SchemaError(f"source {s.id!r} lists an attribute twice")
        for name in s.attributes:
            if name not in seen:
                raise SchemaError(f"source {s.id!r} references unknown attribute {name!r}")
        if s.kind == "macro" and s.weight_column is not None:
            raise SchemaError(f"macro source {s.id!r} cannot carry a weight column")
        if s.weight_column is not None and s.weight_column in seen:
            raise SchemaError(f"source {s.id!r}: weight column {s.weight_column!r} is an attribute")
    richest = [s for s in schema.sources if s.is_richest]
    if len(richest) != 1:
        raise SchemaError(f"exactly one source must be marked richest, found {len(richest)}")
    if richest[0].kind != "micro":
        raise SchemaError(f"richest source {richest[0].id!r} must be micro data")

    core = schema.core.core_attributes
    if not core:
        raise SchemaError("core attribute set is empty")
    for name in core:
        if name not in seen:
            raise SchemaError(f"core attribute {name!r} is not declared")
    for s in schema.sources:
        missing = [c for c in core if c not in s.attributes]
        if missing:
            raise SchemaError(f"core attribute(s) {missing} absent from source {s.id!r}")


# -- file format -----------------------------------------------------------

def schema_to_dict(schema: Schema) -> dict:
    return {
        "attributes": [
            {
                "name": a.name,
                "states": list(a.states),
                "layer": a.layer,
                "type": a.attr_type,
                "ordinal": a.ordinal,
                "territorial": a.territorial,
            }
            for a in schema.attributes
        ],
        "sources": [
            {
                "id": s.id,
                "kind": s.kind,
                "attributes": list(s.attributes),
                "weight_column": s.weight_column,
                "richest": s.is_richest,
                "scope": s.scope,
                "year": s.year,
            }
            for s in schema.sources
        ],
        "core": list(schema.core.core_attributes),
    }


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing required key {key!r}")
    return d[key]


def schema_from_dict(doc: dict) -> Schema:
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a mapping")
    attrs = []
    for i, a in enumerate(_require(doc, "attributes", "schema")):
        where = f"attributes[{i}]"
        states = _require(a, "states", where)
        if not isinstance(states, list):
            raise SchemaError(f"{where}: states must be a list")
        for s in states:
            if not isinstance(s, str):
                raise SchemaError(f"{where}: state {s!r} is not a string (quote it)")
        ordinal = _require(a, "ordinal", where)
        if not isinstance(ordinal, bool):
            raise SchemaError(f"{where}: ordinal must be true or false")
        attrs.append(
            AttributeDef(
                name=_require(a, "name", where),
                states=tuple(states),
                layer=_require(a, "layer", where),
                attr_type=_require(a, "type", where),
                ordinal=ordinal,
                territorial=bool(a.get("territorial", False)),
            )
        )
    sources = []
    for i, s in enumerate(_require(doc, "sources", "schema")):
        where = f"sources[{i}]"
        year = s.get("year")
        sources.append(
            DataSourceDescriptor(
                id=str(_require(s, "id", where)),
                kind=_require(s, "kind", where),
                attributes=tuple(_require(s, "attributes", where)),
                weight_column=s.get("weight_column"),
                is_richest=bool(s.get("richest", False)),
                scope=str(s.get("scope", "") or ""),
                year=None if year is None else int(year),
            )
        )
    core = CoreSpec(tuple(_require(doc, "core", "schema")))
    return Schema(tuple(attrs), tuple(sources), core)


def load_schema(path) -> Schema:
    """Read and validate a schema file (YAML, or JSON as its subset)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse schema file {path}: {exc}") from exc
    return schema_from_dict(doc)


def write_schema(schema: Schema, path) -> None:
    Path(path).write_text(dump_schema(schema), encoding="utf-8")


def dump_schema(schema: Schema) -> str:
    return yaml.safe_dump(schema_to_dict(schema), sort_keys=False, allow_unicode=True)


# -- built-in default ------------------------------------------------------

DISTRICTS = (
    "Ciutat Vella", "Eixample", "Sants-Montjuic", "Les Corts", "Sarria-Sant Gervasi",
    "Gracia", "Horta-Guinardo", "Nou Barris", "Sant Andreu", "Sant Marti",
)
AGE_GROUPS = ("15-24", "25-34", "35-44", "45-54", "55-64", "65-74")
EDUCATION = ("primary or less", "lower secondary", "upper secondary", "tertiary")
NATIONALITY = ("Spain", "rest of EU", "rest of world")
INCOME = ("<600", "600-1200", "1200-2000", "2000-3000", ">=3000")

SCHWARTZ_VALUES = (
    "self_direction", "stimulation", "hedonism", "achievement", "power",
    "security", "conformity", "tradition", "benevolence", "universalism",
)
ALIGNMENTS = (
    "capitalism", "socialism", "communism", "independence",
    "feminism", "ecologism", "multiculturalism", "religion",
)
INTERESTS = ("politics", "sports", "culture", "economy", "science")
CONFIDENCE = (
    "police", "state", "government", "church", "people",
    "monarchy", "justice", "parliament", "media",
)
VIEWS = {
    "immigration": ("positive", "neutral", "negative"),
    "squatting": ("acceptable", "depends", "unacceptable"),
    "sustainability": ("priority", "balanced", "not a priority"),
    "climate_change": ("urgent", "moderate", "not concerned"),
    "minorities": ("favourable", "indifferent", "unfavourable"),
}
PRIORITIES = (
    "importance_family", "importance_friends", "importance_work",
    "importance_personal_time", "importance_studies",
    "satisfaction_professional", "satisfaction_economic",
    "satisfaction_family", "satisfaction_health",
)

DEFAULT_CORE = ("District", "Gender", "Age", "Nationality")


def _scale(lo: int, hi: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(lo, hi + 1))


def barcelona_attributes() -> list[AttributeDef]:
    sd, mot = "socio-demographic", "motivational"
    A = AttributeDef
    attrs = [
        A("District", DISTRICTS, sd, "main", ordinal=False, territorial=True),
        A("Gender", ("female", "male"), sd, "main"),
        A("Age", AGE_GROUPS, sd, "main", ordinal=True),
        A("Nationality", NATIONALITY, sd, "main"),
        A("Education", EDUCATION, sd, "main", ordinal=True),
        A("Unemployment", ("employed", "unemployed"), sd, "main"),
        A("Income", INCOME, sd, "main", ordinal=True),
        A("Hr", ("0", "1", "2", "3", "4+"), sd, "household", ordinal=True),
        A("Ch", ("none", "one or more"), sd, "household"),
        A("Fr", ("0", "1", "2", "3+"), sd, "network", ordinal=True),
    ]
    for k in (1, 2, 3):
        attrs += [
            A(f"Age_friend{k}", AGE_GROUPS, sd, "network", ordinal=True),
            A(f"Gender_friend{k}", ("female", "male"), sd, "network"),
            A(f"Education_friend{k}", EDUCATION, sd, "network", ordinal=True),
            A(f"Nationality_friend{k}", NATIONALITY, sd, "network"),
        ]
    attrs.append(A("MPM", _scale(1, 7), mot, "values", ordinal=True))
    attrs += [A(v, _scale(1, 5), mot, "values", ordinal=True) for v in SCHWARTZ_VALUES]
    attrs += [
        A("ideology_self", _scale(1, 8), mot, "ideologies", ordinal=True),
        A("ideology_parents", _scale(1, 8), mot, "ideologies", ordinal=True),
    ]
    # agreement / disagreement / indifference carry no natural order
    attrs += [
        A(f"align_{x}", ("agreement", "disagreement", "indifference"), mot, "ideologies")
        for x in ALIGNMENTS
    ]
    attrs += [A(f"interest_{x}", _scale(1, 4), mot, "opinions", ordinal=True) for x in INTERESTS]
    attrs += [A(f"confidence_{x}", _scale(1, 4), mot, "opinions", ordinal=True) for x in CONFIDENCE]
    attrs += [A(f"view_{x}", s, mot, "opinions") for x, s in VIEWS.items()]
    attrs += [A(x, _scale(1, 10), mot, "vital-priorities", ordinal=True) for x in PRIORITIES]
    return attrs


def default_barcelona_schema() -> Schema:
    """Built-in schema with the Barcelona use-case attribute inventory.

    Five sources mirror the use case: one macro table (``opendata``) and four
    micro samples, with ``ipums`` as the richest one. Motivational attributes
    are split between the city survey (values, ideologies, opinions) and the
    regional survey (vital priorities).
    """
    attrs = barcelona_attributes()
    names = [a.name for a in attrs]
    core = list(DEFAULT_CORE)
    network = [a.name for a in attrs if a.attr_type == "network"]
    by_type = {}
    for a in attrs:
        by_type.setdefault(a.attr_type, []).append(a.name)
    bcn_survey = [
        n for n in by_type["values"] + by_type["ideologies"] + by_type["opinions"]
    ]
    sources = (
        DataSourceDescriptor("opendata", "macro", tuple(core + ["Unemployment"]),
                             scope="Neighborhood", year=2022),
        DataSourceDescriptor("ipums", "micro",
                             tuple(core + ["Education", "Income", "Hr", "Ch"]),
                             weight_column="perwt", is_richest=True,
                             scope="Municipality", year=2011),
        DataSourceDescriptor("panel", "micro", tuple(core + network),
                             weight_column="weight", scope="Census section", year=2012),
        DataSourceDescriptor("bcn_values", "micro", tuple(core + bcn_survey),
                             scope="District", year=2021),
        DataSourceDescriptor("cat_values", "micro", tuple(core + by_type["vital-priorities"]),
                             scope="Region", year=2023),
    )
    return Schema(tuple(attrs), sources, CoreSpec(tuple(core)))


def restrict(schema: Schema, sources: Sequence[str]) -> Schema:
    """Schema limited to a subset of sources (and the attributes they use)."""
    keep = [schema.source(s) for s in sources]
    used = {a for s in keep for a in s.attributes}
    attrs = tuple(a for a in schema.attributes if a.name in used)
    return Schema(attrs, tuple(keep), schema.core)
