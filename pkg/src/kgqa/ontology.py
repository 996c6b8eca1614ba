"""Entity/relation type system with domain-range validation for graph facts.

The built-in schema models technical-standards documents with six entity
types and ten relation types (seven forward relations plus three inverses;
``relevant`` is declared self-inverse). Custom schemas can be loaded from a
JSON description with the same field names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Union


class OntologyError(Exception):
    """Base class for ontology failures."""


class UnknownEntityTypeError(OntologyError):
    """Raised when a label does not name a schema entity type."""


class UnknownRelationTypeError(OntologyError):
    """Raised when an identifier does not name a schema relation type."""


class SchemaDefinitionError(OntologyError):
    """Raised when a schema description violates its own invariants."""


class Violation(Enum):
    """Reason a typed triple failed validation."""

    UNKNOWN_ENTITY_TYPE = "UnknownEntityType"
    UNKNOWN_RELATION_TYPE = "UnknownRelationType"
    DOMAIN_VIOLATION = "DomainViolation"
    RANGE_VIOLATION = "RangeViolation"
    SELF_LOOP_HEAD_EQUALS_TAIL = "SelfLoopHeadEqualsTail"


@dataclass(frozen=True)
class EntityType:
    """A node label. Equality and hashing use the identifier only."""

    identifier: str
    description: str = field(default="", compare=False)

    def __str__(self) -> str:
        return self.identifier


@dataclass(frozen=True)
class RelationType:
    """An edge type with permitted head (domain) and tail (range) labels.

    ``domain`` and ``range`` hold entity-type identifiers. ``inverse`` names
    the paired relation when one exists; a self-inverse relation names
    itself.
    """

    identifier: str
    domain: frozenset[str]
    range: frozenset[str]
    inverse: str | None = None
    self_inverse: bool = False

    def __str__(self) -> str:
        return self.identifier


@dataclass(frozen=True)
class ValidationVerdict:
    valid: bool
    violation: Violation | None = None
    message: str = ""

    def __post_init__(self) -> None:
        if self.valid == (self.violation is not None):
            raise ValueError("violation must be present iff verdict is invalid")


EntityTypeLike = Union[EntityType, str]
RelationTypeLike = Union[RelationType, str]


class OntologySchema:
    """Immutable set of entity and relation types with constraint checks."""

    def __init__(
        self,
        entity_types: Iterable[EntityType],
        relation_types: Iterable[RelationType],
        version: str = "custom",
    ) -> None:
        self._entity_types = {et.identifier: et for et in entity_types}
        self._relation_types = {rt.identifier: rt for rt in relation_types}
        self.version = version
        self._check_definition()

    def _check_definition(self) -> None:
        known = set(self._entity_types)
        for rel in self._relation_types.values():
            for side, labels in (("domain", rel.domain), ("range", rel.range)):
                stray = set(labels) - known
                if stray:
                    raise SchemaDefinitionError(
                        f"relation {rel.identifier}: {side} names unknown entity "
                        f"types {sorted(stray)}"
                    )
            if rel.self_inverse != (rel.inverse == rel.identifier):
                raise SchemaDefinitionError(
                    f"relation {rel.identifier}: self_inverse flag must match "
                    "inverse naming the relation itself"
                )
            if rel.inverse is None:
                continue
            paired = self._relation_types.get(rel.inverse)
            if paired is None:
                raise SchemaDefinitionError(
                    f"relation {rel.identifier}: inverse {rel.inverse!r} is not "
                    "a schema member"
                )
            if paired.inverse != rel.identifier:
                raise SchemaDefinitionError(
                    f"relations {rel.identifier}/{paired.identifier}: inverse "
                    "references must be mutual"
                )
            # Self-inverse relations with asymmetric domain/range are allowed
            # as declared; only proper pairs must swap domain and range.
            if not rel.self_inverse and (
                paired.domain != rel.range or paired.range != rel.domain
            ):
                raise SchemaDefinitionError(
                    f"relations {rel.identifier}/{paired.identifier}: inverse "
                    "must swap domain and range"
                )

    # -- lookups ---------------------------------------------------------

    @property
    def entity_types(self) -> tuple[EntityType, ...]:
        return tuple(self._entity_types.values())

    @property
    def relation_types(self) -> tuple[RelationType, ...]:
        return tuple(self._relation_types.values())

    def parse_entity_type(self, label: str) -> EntityType:
        """Resolve an exact, case-sensitive identifier after trimming."""
        key = label.strip()
        try:
            return self._entity_types[key]
        except KeyError:
            raise UnknownEntityTypeError(
                f"unknown entity type {key!r}; expected one of "
                f"{sorted(self._entity_types)}"
            ) from None

    def parse_relation_type(self, identifier: str) -> RelationType:
        """Resolve an exact, case-sensitive relation identifier after trimming."""
        key = identifier.strip()
        try:
            return self._relation_types[key]
        except KeyError:
            raise UnknownRelationTypeError(
                f"unknown relation type {key!r}; expected one of "
                f"{sorted(self._relation_types)}"
            ) from None

    def has_entity_type(self, label: str) -> bool:
        return label.strip() in self._entity_types

    def has_relation_type(self, identifier: str) -> bool:
        return identifier.strip() in self._relation_types

    def inverse_of(self, rel: RelationTypeLike) -> RelationType | None:
        """Return the paired relation, the relation itself when self-inverse,
        or None when the schema declares no inverse."""
        rel = self._resolve_relation(rel)
        if rel.inverse is None:
            return None
        return self._relation_types[rel.inverse]

    def _resolve_relation(self, rel: RelationTypeLike) -> RelationType:
        if isinstance(rel, RelationType):
            if rel.identifier not in self._relation_types:
                raise UnknownRelationTypeError(
                    f"relation {rel.identifier!r} is not a member of this schema"
                )
            return self._relation_types[rel.identifier]
        return self.parse_relation_type(rel)

    # -- validation ------------------------------------------------------

    def validate_triple(
        self,
        head_type: EntityTypeLike,
        rel: RelationTypeLike,
        tail_type: EntityTypeLike,
        head_name: str,
        tail_name: str,
    ) -> ValidationVerdict:
        """Check a typed triple: domain, then range, then the self-loop rule.

        The first failing check is reported. Names are compared
        case-sensitively after trimming surrounding whitespace.
        """
        try:
            head = (
                head_type
                if isinstance(head_type, EntityType)
                else self.parse_entity_type(head_type)
            )
            tail = (
                tail_type
                if isinstance(tail_type, EntityType)
                else self.parse_entity_type(tail_type)
            )
        except UnknownEntityTypeError as exc:
            return ValidationVerdict(False, Violation.UNKNOWN_ENTITY_TYPE, str(exc))
        if head.identifier not in self._entity_types:
            return ValidationVerdict(
                False,
                Violation.UNKNOWN_ENTITY_TYPE,
                f"entity type {head.identifier!r} is not a schema member",
            )
        if tail.identifier not in self._entity_types:
            return ValidationVerdict(
                False,
                Violation.UNKNOWN_ENTITY_TYPE,
                f"entity type {tail.identifier!r} is not a schema member",
            )
        try:
            relation = self._resolve_relation(rel)
        except UnknownRelationTypeError as exc:
            return ValidationVerdict(False, Violation.UNKNOWN_RELATION_TYPE, str(exc))

        if head.identifier not in relation.domain:
            return ValidationVerdict(
                False,
                Violation.DOMAIN_VIOLATION,
                f"{head.identifier} is not in the domain of {relation.identifier} "
                f"({sorted(relation.domain)})",
            )
        if tail.identifier not in relation.range:
            return ValidationVerdict(
                False,
                Violation.RANGE_VIOLATION,
                f"{tail.identifier} is not in the range of {relation.identifier} "
                f"({sorted(relation.range)})",
            )
        if head_name.strip() == tail_name.strip():
            return ValidationVerdict(
                False,
                Violation.SELF_LOOP_HEAD_EQUALS_TAIL,
                f"head and tail share the name {head_name.strip()!r}",
            )
        return ValidationVerdict(True)

    def enumerate_valid_combinations(
        self,
    ) -> set[tuple[EntityType, str, EntityType]]:
        """All (head type, relation identifier, tail type) combinations whose
        domain/range checks pass. The self-loop name check does not apply."""
        combos: set[tuple[EntityType, str, EntityType]] = set()
        for rel in self._relation_types.values():
            for h in rel.domain:
                for t in rel.range:
                    combos.add((self._entity_types[h], rel.identifier, self._entity_types[t]))
        return combos

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "entity_types": [
                {"identifier": et.identifier, "description": et.description}
                for et in self._entity_types.values()
            ],
            "relation_types": [
                {
                    "identifier": rt.identifier,
                    "domain": sorted(rt.domain),
                    "range": sorted(rt.range),
                    "inverse": rt.inverse,
                    "self_inverse": rt.self_inverse,
                }
                for rt in self._relation_types.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OntologySchema":
        try:
            entity_types = [
                EntityType(e["identifier"], e.get("description", ""))
                for e in data["entity_types"]
            ]
            relation_types = [
                RelationType(
                    identifier=r["identifier"],
                    domain=frozenset(r["domain"]),
                    range=frozenset(r["range"]),
                    inverse=r.get("inverse"),
                    self_inverse=bool(r.get("self_inverse", False)),
                )
                for r in data["relation_types"]
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaDefinitionError(f"malformed schema description: {exc}") from exc
        return cls(entity_types, relation_types, version=data.get("version", "custom"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "OntologySchema":
        return cls.from_dict(json.loads(text))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "OntologySchema":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# -- built-in schema -------------------------------------------------------

IDEN = EntityType(
    "IDEN",
    "Identifier: the unique name of an entity together with its type or "
    "defining source",
)
STR_COM = EntityType(
    "STR_COM",
    "Structure/Composition: how the internal units, components or the whole "
    "of an entity are constituted",
)
APP_CON = EntityType(
    "APP_CON",
    "Suitability/Context: the scope, constraints or application context of "
    "an entity",
)
ACT = EntityType(
    "ACT",
    "Action: operational steps or behaviors carried out or involved",
)
VALUE = EntityType(
    "VALUE",
    "Value: specific values, encodings or settings associated with an entity",
)
FUN = EntityType(
    "FUN",
    "Function: the specific action or function performed",
)

DEFAULT_ENTITY_TYPES = (IDEN, STR_COM, APP_CON, ACT, VALUE, FUN)

DEFAULT_RELATION_TYPES = (
    RelationType(
        "contain",
        domain=frozenset({"STR_COM", "IDEN"}),
        range=frozenset({"IDEN", "VALUE"}),
        inverse="isContained",
    ),
    RelationType(
        "isReliedOn",
        domain=frozenset({"FUN"}),
        range=frozenset({"VALUE"}),
    ),
    RelationType(
        "accomplish",
        domain=frozenset({"ACT"}),
        range=frozenset({"FUN"}),
    ),
    RelationType(
        "limit",
        domain=frozenset({"STR_COM", "APP_CON"}),
        range=frozenset({"FUN", "ACT"}),
    ),
    RelationType(
        "relevant",
        domain=frozenset({"FUN", "VALUE", "ACT", "IDEN"}),
        range=frozenset({"IDEN", "APP_CON"}),
        inverse="relevant",
        self_inverse=True,
    ),
    RelationType(
        "execute",
        domain=frozenset({"VALUE"}),
        range=frozenset({"ACT"}),
        inverse="undo",
    ),
    RelationType(
        "influence",
        domain=frozenset({"APP_CON"}),
        range=frozenset({"STR_COM"}),
        inverse="isInfluenced",
    ),
    RelationType(
        "isContained",
        domain=frozenset({"IDEN", "VALUE"}),
        range=frozenset({"STR_COM", "IDEN"}),
        inverse="contain",
    ),
    RelationType(
        "undo",
        domain=frozenset({"ACT"}),
        range=frozenset({"VALUE"}),
        inverse="execute",
    ),
    RelationType(
        "isInfluenced",
        domain=frozenset({"STR_COM"}),
        range=frozenset({"APP_CON"}),
        inverse="influence",
    ),
)

DEFAULT_SCHEMA = OntologySchema(
    DEFAULT_ENTITY_TYPES, DEFAULT_RELATION_TYPES, version="default-v1"
)


def parse_entity_type(label: str, schema: OntologySchema = DEFAULT_SCHEMA) -> EntityType:
    return schema.parse_entity_type(label)


def inverse_of(
    rel: RelationTypeLike, schema: OntologySchema = DEFAULT_SCHEMA
) -> RelationType | None:
    return schema.inverse_of(rel)


def validate_triple(
    head_type: EntityTypeLike,
    rel: RelationTypeLike,
    tail_type: EntityTypeLike,
    head_name: str,
    tail_name: str,
    schema: OntologySchema = DEFAULT_SCHEMA,
) -> ValidationVerdict:
    return schema.validate_triple(head_type, rel, tail_type, head_name, tail_name)


def enumerate_valid_combinations(
    schema: OntologySchema = DEFAULT_SCHEMA,
) -> set[tuple[EntityType, str, EntityType]]:
    return schema.enumerate_valid_combinations()
