"""Rule-driven room-type assignment from per-image tag predictions.

The default rule table encodes the production ruleset: a bathroom scene tag
wins outright; guestroom-like indoor scenes split into bedroom vs living room
on the presence of a bed or couch object, with close-up shots excluded.
Rules are ordered and the first match wins; anything unmatched is ``other``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .catalog import PropertyCatalog, TagSet, canonical_label
from .errors import IoFailure, MalformedDocument, SchemaViolation


class RoomType(Enum):
    BEDROOM = "bedroom"
    LIVING_ROOM = "living room"
    BATHROOM = "bathroom"
    OTHER = "other"


@dataclass(frozen=True)
class Rule:
    """One match rule.

    ``scenes_any`` matches when empty or when it intersects the image's
    scenes; ``concepts_all`` / ``objects_all`` must all be present; the
    exclusion sets must all be absent.
    """

    room_type: RoomType
    scenes_any: frozenset[str] = frozenset()
    concepts_all: frozenset[str] = frozenset()
    objects_all: frozenset[str] = frozenset()
    exclude_concepts: frozenset[str] = frozenset()
    exclude_objects: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for name in ("scenes_any", "concepts_all", "objects_all", "exclude_concepts", "exclude_objects"):
            object.__setattr__(self, name, frozenset(canonical_label(v) for v in getattr(self, name)))

    def matches(self, tags: TagSet) -> bool:
        scenes = set(tags.scenes)
        concepts = set(tags.concepts)
        objects = set(tags.objects)
        if self.scenes_any and not (scenes & self.scenes_any):
            return False
        if not self.concepts_all <= concepts:
            return False
        if not self.objects_all <= objects:
            return False
        if self.exclude_concepts & concepts:
            return False
        if self.exclude_objects & objects:
            return False
        return True


@dataclass(frozen=True)
class RuleTable:
    rules: tuple[Rule, ...] = field(default_factory=tuple)


_INDOOR_SCENES = ("guestroom", "property interior", "undetermined")


def default_rule_table() -> RuleTable:
    """The built-in production ruleset.

    Order is bathroom, bedroom, living room; the bed-object exclusion keeps
    bedroom and living room disjoint, so order only matters for tag
    combinations outside the rule vocabulary.
    """
    return RuleTable(
        rules=(
            Rule(room_type=RoomType.BATHROOM, scenes_any=frozenset({"bathroom"})),
            Rule(
                room_type=RoomType.BEDROOM,
                scenes_any=frozenset(_INDOOR_SCENES),
                concepts_all=frozenset({"indoor"}),
                objects_all=frozenset({"bed"}),
                exclude_concepts=frozenset({"closeup"}),
            ),
            Rule(
                room_type=RoomType.LIVING_ROOM,
                scenes_any=frozenset(_INDOOR_SCENES),
                concepts_all=frozenset({"indoor"}),
                objects_all=frozenset({"couch"}),
                exclude_concepts=frozenset({"closeup"}),
                exclude_objects=frozenset({"bed"}),
            ),
        )
    )


def classify_room_type(tags: TagSet, rules: RuleTable | None = None) -> RoomType:
    """Return the room type of the first matching rule, or ``OTHER``.

    Total: never raises on any tag combination.
    """
    table = rules if rules is not None else default_rule_table()
    for rule in table.rules:
        if rule.matches(tags):
            return rule.room_type
    return RoomType.OTHER


def partition_by_room_type(
    catalog: PropertyCatalog, rules: RuleTable | None = None
) -> dict[RoomType, list[str]]:
    """Bucket every catalog image id by room type, preserving catalog order."""
    buckets: dict[RoomType, list[str]] = {rt: [] for rt in RoomType}
    for img in catalog.images:
        buckets[classify_room_type(img.tags, rules)].append(img.image_id)
    return buckets


# ---------------------------------------------------------------------------
# rules config document

_RULE_KEYS = {
    "room_type",
    "scenes_any",
    "concepts_all",
    "objects_all",
    "exclude_concepts",
    "exclude_objects",
}


def rule_table_from_document(doc, source: str = "<document>") -> RuleTable:
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise SchemaViolation(f"{source}: expected an object with a 'rules' list")
    rules = []
    for i, rule_doc in enumerate(doc["rules"]):
        path = f"{source}.rules[{i}]"
        if not isinstance(rule_doc, dict):
            raise SchemaViolation(f"{path}: must be an object")
        unknown = set(rule_doc) - _RULE_KEYS
        if unknown:
            raise SchemaViolation(f"{path}: unknown fields {sorted(unknown)}")
        try:
            room_type = RoomType(canonical_label(rule_doc["room_type"]))
        except (KeyError, ValueError) as exc:
            raise SchemaViolation(f"{path}.room_type: must be one of "
                                  f"{[rt.value for rt in RoomType]}") from exc
        sets = {}
        for key in _RULE_KEYS - {"room_type"}:
            value = rule_doc.get(key, [])
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise SchemaViolation(f"{path}.{key}: must be a list of strings")
            sets[key] = frozenset(value)
        rules.append(Rule(room_type=room_type, **sets))
    return RuleTable(rules=tuple(rules))


def load_rule_table(path) -> RuleTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from exc
    return rule_table_from_document(doc, source=str(path))
