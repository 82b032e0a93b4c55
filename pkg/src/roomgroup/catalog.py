"""Property catalog data model, validation, and document persistence.

A catalog document is a UTF-8 JSON file describing one property: its images
(with precomputed tag predictions) and its metadata (room counts per room
type, bed-type inventory).  Grouping documents mirror :class:`GroupingOutput`
and are written with sorted keys so repeated writes are byte-stable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoFailure, MalformedDocument, SchemaViolation


def canonical_label(label: str) -> str:
    """Trim, lowercase, and collapse internal whitespace of a label."""
    return " ".join(label.split()).lower()


@dataclass(frozen=True)
class TagSet:
    """Scene / concept / object tags predicted for one image.

    Labels are canonicalized on construction so comparisons are
    case- and whitespace-insensitive.
    """

    scenes: tuple[str, ...] = ()
    concepts: tuple[str, ...] = ()
    objects: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenes", tuple(canonical_label(s) for s in self.scenes))
        object.__setattr__(self, "concepts", tuple(canonical_label(s) for s in self.concepts))
        object.__setattr__(self, "objects", tuple(canonical_label(s) for s in self.objects))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    uri: str
    tags: TagSet


@dataclass(frozen=True)
class PropertyMetadata:
    """Owner-provided metadata: room counts per room type and bed inventory.

    ``bed_types`` may legitimately be shorter or longer than the bedroom
    count; mismatches surface later, during bed mapping.
    """

    room_counts: dict[str, int] = field(default_factory=dict)
    bed_types: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "room_counts", {canonical_label(k): v for k, v in self.room_counts.items()}
        )
        object.__setattr__(self, "bed_types", tuple(canonical_label(b) for b in self.bed_types))


@dataclass(frozen=True)
class PropertyCatalog:
    property_id: str
    images: tuple[ImageRecord, ...]
    metadata: PropertyMetadata

    def image_uris(self) -> dict[str, str]:
        return {img.image_id: img.uri for img in self.images}


@dataclass
class Group:
    """One recovered room space: its member images and cohesion score."""

    group_id: str
    image_ids: tuple[str, ...]
    mean_internal_score: float
    bed_type: str | None = None


@dataclass
class GroupingOutput:
    """Full grouping result for one property.

    ``room_types`` maps a room-type name to its ordered group list;
    ``unassigned`` holds images pruned as noise or lacking a room count.
    """

    property_id: str
    room_types: dict[str, list[Group]]
    unassigned: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# catalog documents


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise SchemaViolation(f"{path}.{key}: missing required field")
    return doc[key]


def _warn_unknown(doc: dict, known: set[str], path: str) -> None:
    for key in doc:
        if key not in known:
            warnings.warn(f"{path}.{key}: unknown field ignored", stacklevel=3)


def _tags_from_document(doc, path: str) -> TagSet:
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{path}: tags must be an object")
    _warn_unknown(doc, {"scenes", "concepts", "objects"}, path)
    lists = {}
    for key in ("scenes", "concepts", "objects"):
        value = _require(doc, key, path)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise SchemaViolation(f"{path}.{key}: must be a list of strings")
        lists[key] = tuple(value)
    return TagSet(**lists)


def catalog_from_document(doc, source: str = "<document>") -> PropertyCatalog:
    """Validate a parsed catalog document and build a :class:`PropertyCatalog`."""
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{source}: top level must be an object")
    _warn_unknown(doc, {"property_id", "images", "metadata"}, source)

    property_id = _require(doc, "property_id", source)
    if not isinstance(property_id, str) or not property_id:
        raise SchemaViolation(f"{source}.property_id: must be a non-empty string")

    images_doc = _require(doc, "images", source)
    if not isinstance(images_doc, list) or not images_doc:
        raise SchemaViolation(f"{source}.images: must be a non-empty list")
    images = []
    seen: set[str] = set()
    for i, img in enumerate(images_doc):
        path = f"{source}.images[{i}]"
        if not isinstance(img, dict):
            raise SchemaViolation(f"{path}: must be an object")
        _warn_unknown(img, {"image_id", "uri", "tags"}, path)
        image_id = _require(img, "image_id", path)
        if not isinstance(image_id, str) or not image_id:
            raise SchemaViolation(f"{path}.image_id: must be a non-empty string")
        if image_id in seen:
            raise SchemaViolation(f"{path}.image_id: duplicate image_id '{image_id}'")
        seen.add(image_id)
        uri = _require(img, "uri", path)
        if not isinstance(uri, str):
            raise SchemaViolation(f"{path}.uri: must be a string")
        tags = _tags_from_document(_require(img, "tags", path), f"{path}.tags")
        images.append(ImageRecord(image_id=image_id, uri=uri, tags=tags))

    meta_doc = _require(doc, "metadata", source)
    if not isinstance(meta_doc, dict):
        raise SchemaViolation(f"{source}.metadata: must be an object")
    _warn_unknown(meta_doc, {"room_counts", "bed_types"}, f"{source}.metadata")
    counts_doc = meta_doc.get("room_counts", {})
    if not isinstance(counts_doc, dict):
        raise SchemaViolation(f"{source}.metadata.room_counts: must be an object")
    room_counts = {}
    for name, count in counts_doc.items():
        path = f"{source}.metadata.room_counts['{name}']"
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise SchemaViolation(f"{path}: room count must be a positive integer")
        room_counts[name] = count
    beds_doc = meta_doc.get("bed_types", [])
    if not isinstance(beds_doc, list) or not all(isinstance(b, str) and b for b in beds_doc):
        raise SchemaViolation(f"{source}.metadata.bed_types: must be a list of non-empty strings")

    return PropertyCatalog(
        property_id=property_id,
        images=tuple(images),
        metadata=PropertyMetadata(room_counts=room_counts, bed_types=tuple(beds_doc)),
    )


def load_catalog(path) -> PropertyCatalog:
    """Load and validate a catalog document from ``path``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from exc
    return catalog_from_document(doc, source=str(path))


def catalog_to_document(catalog: PropertyCatalog) -> dict:
    return {
        "property_id": catalog.property_id,
        "images": [
            {
                "image_id": img.image_id,
                "uri": img.uri,
                "tags": {
                    "scenes": list(img.tags.scenes),
                    "concepts": list(img.tags.concepts),
                    "objects": list(img.tags.objects),
                },
            }
            for img in catalog.images
        ],
        "metadata": {
            "room_counts": dict(catalog.metadata.room_counts),
            "bed_types": list(catalog.metadata.bed_types),
        },
    }


def write_catalog(catalog: PropertyCatalog, path) -> None:
    _dump_document(catalog_to_document(catalog), path)


# ---------------------------------------------------------------------------
# grouping documents


def validate_grouping(g: GroupingOutput) -> None:
    """Check the partition invariant: every image id appears exactly once."""
    if not g.property_id:
        raise SchemaViolation("grouping.property_id: must be non-empty")
    seen: set[str] = set()
    for room_type, groups in g.room_types.items():
        for gi, group in enumerate(groups):
            path = f"grouping.room_types['{room_type}'][{gi}]"
            if not (0.0 <= group.mean_internal_score <= 1.0):
                raise SchemaViolation(f"{path}.mean_internal_score: outside [0, 1]")
            if group.bed_type is not None and room_type != "bedroom":
                raise SchemaViolation(f"{path}.bed_type: set on non-bedroom group")
            for image_id in group.image_ids:
                if image_id in seen:
                    raise SchemaViolation(f"{path}: image '{image_id}' appears more than once")
                seen.add(image_id)
    for image_id in g.unassigned:
        if image_id in seen:
            raise SchemaViolation(f"grouping.unassigned: image '{image_id}' appears more than once")
        seen.add(image_id)


def validate_grouping_against_catalog(g: GroupingOutput, catalog: PropertyCatalog) -> None:
    """Check full coverage: the grouping partitions exactly the catalog's images."""
    validate_grouping(g)
    grouped = {i for groups in g.room_types.values() for grp in groups for i in grp.image_ids}
    grouped.update(g.unassigned)
    expected = {img.image_id for img in catalog.images}
    missing = expected - grouped
    extra = grouped - expected
    if missing:
        raise SchemaViolation(f"grouping: catalog images not covered: {sorted(missing)}")
    if extra:
        raise SchemaViolation(f"grouping: unknown image ids: {sorted(extra)}")


def grouping_to_document(g: GroupingOutput) -> dict:
    return {
        "property_id": g.property_id,
        "room_types": {
            room_type: [
                {
                    "group_id": grp.group_id,
                    "image_ids": list(grp.image_ids),
                    "mean_internal_score": grp.mean_internal_score,
                    "bed_type": grp.bed_type,
                }
                for grp in groups
            ]
            for room_type, groups in g.room_types.items()
        },
        "unassigned": list(g.unassigned),
    }


def grouping_from_document(doc, source: str = "<document>") -> GroupingOutput:
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{source}: top level must be an object")
    _warn_unknown(doc, {"property_id", "room_types", "unassigned"}, source)
    property_id = _require(doc, "property_id", source)
    room_types_doc = _require(doc, "room_types", source)
    if not isinstance(room_types_doc, dict):
        raise SchemaViolation(f"{source}.room_types: must be an object")
    room_types: dict[str, list[Group]] = {}
    for room_type, groups_doc in room_types_doc.items():
        if not isinstance(groups_doc, list):
            raise SchemaViolation(f"{source}.room_types['{room_type}']: must be a list")
        groups = []
        for gi, grp in enumerate(groups_doc):
            path = f"{source}.room_types['{room_type}'][{gi}]"
            if not isinstance(grp, dict):
                raise SchemaViolation(f"{path}: must be an object")
            _warn_unknown(grp, {"group_id", "image_ids", "mean_internal_score", "bed_type"}, path)
            ids = _require(grp, "image_ids", path)
            if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
                raise SchemaViolation(f"{path}.image_ids: must be a list of strings")
            score = _require(grp, "mean_internal_score", path)
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise SchemaViolation(f"{path}.mean_internal_score: must be a number")
            bed_type = grp.get("bed_type")
            if bed_type is not None and not isinstance(bed_type, str):
                raise SchemaViolation(f"{path}.bed_type: must be a string or null")
            groups.append(
                Group(
                    group_id=_require(grp, "group_id", path),
                    image_ids=tuple(ids),
                    mean_internal_score=float(score),
                    bed_type=bed_type,
                )
            )
        room_types[room_type] = groups
    unassigned = doc.get("unassigned", [])
    if not isinstance(unassigned, list) or not all(isinstance(i, str) for i in unassigned):
        raise SchemaViolation(f"{source}.unassigned: must be a list of strings")
    g = GroupingOutput(property_id=property_id, room_types=room_types, unassigned=tuple(unassigned))
    validate_grouping(g)
    return g


def write_grouping(g: GroupingOutput, path) -> None:
    """Write ``g`` as a grouping document; keys are emitted in sorted order."""
    validate_grouping(g)
    _dump_document(grouping_to_document(g), path)


def load_grouping(path) -> GroupingOutput:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from exc
    return grouping_from_document(doc, source=str(path))


def _dump_document(doc: dict, path) -> None:
    try:
        Path(path).write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
