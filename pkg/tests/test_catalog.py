import json

import numpy as np
import pytest

from roomgroup.catalog import (
    Group,
    GroupingOutput,
    canonical_label,
    catalog_from_document,
    load_catalog,
    load_grouping,
    validate_grouping,
    validate_grouping_against_catalog,
    write_grouping,
)
from roomgroup.errors import MalformedDocument, SchemaViolation

MINIMAL = {
    "property_id": "P1",
    "images": [
        {
            "image_id": "i1",
            "uri": "s3://x/i1.jpg",
            "tags": {"scenes": ["guestroom"], "concepts": ["indoor"], "objects": ["bed"]},
        }
    ],
    "metadata": {"room_counts": {"bedroom": 1}, "bed_types": ["1 King Bed"]},
}


def test_canonical_label():
    assert canonical_label("  Living   Room ") == "living room"
    assert canonical_label("Bed") == "bed"


def test_minimal_document_round_trip(tmp_path):
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(MINIMAL), encoding="utf-8")
    catalog = load_catalog(path)
    assert catalog.property_id == "P1"
    assert len(catalog.images) == 1
    assert catalog.images[0].tags.scenes == ("guestroom",)
    assert catalog.metadata.room_counts == {"bedroom": 1}
    assert catalog.metadata.bed_types == ("1 king bed",)


def test_labels_canonicalized_on_load():
    doc = json.loads(json.dumps(MINIMAL))
    doc["images"][0]["tags"]["scenes"] = ["  GuestRoom "]
    doc["metadata"]["room_counts"] = {"Living  Room": 2}
    catalog = catalog_from_document(doc)
    assert catalog.images[0].tags.scenes == ("guestroom",)
    assert catalog.metadata.room_counts == {"living room": 2}


def test_duplicate_image_id_names_the_id():
    doc = json.loads(json.dumps(MINIMAL))
    doc["images"].append(dict(doc["images"][0]))
    with pytest.raises(SchemaViolation, match="i1"):
        catalog_from_document(doc)


def test_nonpositive_room_count_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["metadata"]["room_counts"] = {"bedroom": 0}
    with pytest.raises(SchemaViolation, match="room_counts"):
        catalog_from_document(doc)


def test_missing_tag_list_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    del doc["images"][0]["tags"]["objects"]
    with pytest.raises(SchemaViolation, match="objects"):
        catalog_from_document(doc)


def test_unknown_fields_ignored_with_warning():
    doc = json.loads(json.dumps(MINIMAL))
    doc["flavor"] = "extra"
    with pytest.warns(UserWarning, match="flavor"):
        catalog = catalog_from_document(doc)
    assert catalog.property_id == "P1"


def test_malformed_document(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(MalformedDocument):
        load_catalog(path)


# ---------------------------------------------------------------------------
# grouping documents


def _grouping(unassigned=()):
    return GroupingOutput(
        property_id="P1",
        room_types={
            "bedroom": [
                Group("bedroom-1", ("a", "b"), 0.9, "1 king bed"),
                Group("bedroom-2", ("c",), 1.0, "2 twin beds"),
            ],
            "bathroom": [Group("bathroom-1", ("d",), 1.0)],
        },
        unassigned=tuple(unassigned),
    )


def test_grouping_write_read_round_trip(tmp_path):
    g = _grouping(unassigned=("e",))
    path = tmp_path / "grouping.json"
    write_grouping(g, path)
    assert load_grouping(path) == g


def test_grouping_write_is_byte_stable(tmp_path):
    g = _grouping()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_grouping(g, a)
    write_grouping(g, b)
    assert a.read_bytes() == b.read_bytes()


def test_unassigned_only_grouping(tmp_path):
    g = GroupingOutput(property_id="P1", room_types={}, unassigned=("a", "b"))
    path = tmp_path / "grouping.json"
    write_grouping(g, path)
    loaded = load_grouping(path)
    assert loaded.unassigned == ("a", "b")
    assert loaded.room_types == {}


def test_twelve_images_four_groups_cover_once():
    ids = [f"im{i:02d}" for i in range(12)]
    groups = [
        Group(f"bedroom-{g + 1}", tuple(ids[3 * g : 3 * g + 3]), 0.8) for g in range(4)
    ]
    g = GroupingOutput(property_id="P1", room_types={"bedroom": groups}, unassigned=())
    validate_grouping(g)
    covered = [i for grp in g.room_types["bedroom"] for i in grp.image_ids]
    assert sorted(covered) == sorted(ids)
    assert len(set(covered)) == 12


def test_duplicate_across_groups_rejected_on_write(tmp_path):
    g = GroupingOutput(
        property_id="P1",
        room_types={"bedroom": [Group("bedroom-1", ("a", "a"), 0.5)]},
    )
    with pytest.raises(SchemaViolation, match="'a'"):
        write_grouping(g, tmp_path / "grouping.json")


def test_bed_type_on_non_bedroom_rejected():
    g = GroupingOutput(
        property_id="P1",
        room_types={"bathroom": [Group("bathroom-1", ("a",), 1.0, "1 king bed")]},
    )
    with pytest.raises(SchemaViolation, match="bed_type"):
        validate_grouping(g)


def test_coverage_against_catalog():
    catalog = catalog_from_document(MINIMAL)
    good = GroupingOutput(
        property_id="P1",
        room_types={"bedroom": [Group("bedroom-1", ("i1",), 1.0)]},
    )
    validate_grouping_against_catalog(good, catalog)
    missing = GroupingOutput(property_id="P1", room_types={}, unassigned=())
    with pytest.raises(SchemaViolation, match="not covered"):
        validate_grouping_against_catalog(missing, catalog)


def _random_grouping(rng):
    n_types = int(rng.integers(0, 3))
    type_names = ["bedroom", "bathroom", "living room"][:n_types]
    seq = 0
    room_types = {}
    for name in type_names:
        groups = []
        for gi in range(int(rng.integers(1, 4))):
            size = int(rng.integers(0, 4))
            ids = tuple(f"im{seq + j:03d}" for j in range(size))
            seq += size
            bed = "1 king bed" if name == "bedroom" and size and rng.integers(2) else None
            groups.append(
                Group(f"{name}-{gi + 1}", ids, float(np.round(rng.uniform(), 6)), bed)
            )
        room_types[name] = groups
    unassigned = tuple(f"im{seq + j:03d}" for j in range(int(rng.integers(0, 3))))
    return GroupingOutput(property_id="P7", room_types=room_types, unassigned=unassigned)


def test_round_trip_property_over_generated_outputs(tmp_path):
    rng = np.random.default_rng(42)
    for trial in range(50):
        g = _random_grouping(rng)
        path = tmp_path / f"g{trial}.json"
        write_grouping(g, path)
        assert load_grouping(path) == g
