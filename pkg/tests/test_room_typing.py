import itertools
import json

import pytest

from roomgroup.catalog import PropertyCatalog, PropertyMetadata, ImageRecord, TagSet
from roomgroup.errors import SchemaViolation
from roomgroup.room_typing import (
    RoomType,
    classify_room_type,
    load_rule_table,
    partition_by_room_type,
)

# The five worked rule-table cases.
WORKED_EXAMPLES = [
    (TagSet(scenes=("bathroom",)), RoomType.BATHROOM),
    (TagSet(scenes=("guestroom",), concepts=("indoor",), objects=("bed",)), RoomType.BEDROOM),
    (
        TagSet(scenes=("guestroom",), concepts=("indoor",), objects=("couch", "bed")),
        RoomType.BEDROOM,
    ),
    (TagSet(scenes=("pool",), concepts=("outdoor",)), RoomType.OTHER),
    (
        TagSet(scenes=("guestroom",), concepts=("indoor", "closeup"), objects=("bed",)),
        RoomType.OTHER,
    ),
]


@pytest.mark.parametrize("tags,expected", WORKED_EXAMPLES)
def test_worked_examples(tags, expected):
    assert classify_room_type(tags) is expected


def test_couch_without_bed_is_living_room():
    tags = TagSet(scenes=("property interior",), concepts=("indoor",), objects=("couch",))
    assert classify_room_type(tags) is RoomType.LIVING_ROOM


def test_tag_order_irrelevant():
    a = TagSet(scenes=("guestroom", "bathroom"), concepts=("indoor",), objects=("bed", "couch"))
    b = TagSet(scenes=("bathroom", "guestroom"), concepts=("indoor",), objects=("couch", "bed"))
    assert classify_room_type(a) is classify_room_type(b)


def test_case_insensitive_matching():
    tags = TagSet(scenes=("GuestRoom",), concepts=("Indoor",), objects=("Bed",))
    assert classify_room_type(tags) is RoomType.BEDROOM


VOCAB_SCENES = ("bathroom", "guestroom", "property interior", "undetermined")
VOCAB_CONCEPTS = ("indoor", "closeup")
VOCAB_OBJECTS = ("bed", "couch")


def _powerset(items):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def test_exhaustive_vocabulary_sweep_bed_never_living_room():
    """Over every tag combination from the rule vocabulary, an image carrying
    the bed object never classifies as living room, and classification is a
    total function."""
    checked = 0
    for scenes in _powerset(VOCAB_SCENES):
        for concepts in _powerset(VOCAB_CONCEPTS):
            for objects in _powerset(VOCAB_OBJECTS):
                result = classify_room_type(TagSet(scenes, concepts, objects))
                assert isinstance(result, RoomType)
                if "bed" in objects:
                    assert result is not RoomType.LIVING_ROOM
                checked += 1
    assert checked == 2 ** 8


def _catalog(tag_sets):
    return PropertyCatalog(
        property_id="P1",
        images=tuple(
            ImageRecord(image_id=f"i{j}", uri="", tags=t) for j, t in enumerate(tag_sets)
        ),
        metadata=PropertyMetadata(),
    )


def test_partition_all_bathroom():
    catalog = _catalog([TagSet(scenes=("bathroom",))] * 3)
    buckets = partition_by_room_type(catalog)
    assert buckets[RoomType.BATHROOM] == ["i0", "i1", "i2"]
    assert buckets[RoomType.BEDROOM] == []


def test_partition_matches_per_image_classification():
    tag_sets = [t for t, _ in WORKED_EXAMPLES]
    catalog = _catalog(tag_sets)
    buckets = partition_by_room_type(catalog)
    for img in catalog.images:
        expected = classify_room_type(img.tags)
        assert img.image_id in buckets[expected]
    total = sum(len(ids) for ids in buckets.values())
    assert total == len(catalog.images)


def test_partition_preserves_catalog_order():
    tag_sets = [
        TagSet(scenes=("bathroom",)),
        TagSet(scenes=("guestroom",), concepts=("indoor",), objects=("bed",)),
        TagSet(scenes=("bathroom",)),
    ]
    buckets = partition_by_room_type(_catalog(tag_sets))
    assert buckets[RoomType.BATHROOM] == ["i0", "i2"]


def test_empty_tags_fall_through_to_other():
    buckets = partition_by_room_type(_catalog([TagSet()] * 4))
    assert buckets[RoomType.OTHER] == ["i0", "i1", "i2", "i3"]


def test_rules_config_document(tmp_path):
    doc = {
        "rules": [
            {"room_type": "other", "scenes_any": ["pool"]},
            {"room_type": "bathroom", "scenes_any": ["bathroom"]},
        ]
    }
    path = tmp_path / "rules.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    table = load_rule_table(path)
    assert len(table.rules) == 2
    assert classify_room_type(TagSet(scenes=("pool",)), table) is RoomType.OTHER
    assert classify_room_type(TagSet(scenes=("bathroom",)), table) is RoomType.BATHROOM
    # default bedroom rule is absent from this table
    bedroom_tags = TagSet(scenes=("guestroom",), concepts=("indoor",), objects=("bed",))
    assert classify_room_type(bedroom_tags, table) is RoomType.OTHER


def test_rules_config_rejects_unknown_room_type(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"rules": [{"room_type": "garage"}]}), encoding="utf-8")
    with pytest.raises(SchemaViolation, match="room_type"):
        load_rule_table(path)
