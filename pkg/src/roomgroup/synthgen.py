"""Synthetic properties with planted room layouts and known ground truth.

Rooms are laid out on a line in 2-D; each image is a camera pose (room,
position, heading).  The oracle overlap score depends only on whether two
poses share a room and on their wrapped heading difference, so the true
partition is recoverable from the score matrix.  The generator also emits
embeddings plus head weights whose scores are a monotone sigmoid surrogate
of the oracle, and declarative pair-training manifests.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import (
    ImageRecord,
    PropertyCatalog,
    PropertyMetadata,
    TagSet,
    canonical_label,
)
from .errors import (
    InsufficientRooms,
    IoFailure,
    MalformedDocument,
    SchemaViolation,
)
from .overlap import Embedding, HeadLayer, HeadWeights, ScorerBackend

_ROOM_SIZE = 3.0  # square rooms, metres
_CROSS_ROOM_SCORE = 0.05
_SAME_ROOM_FLOOR = 0.1

_ROOM_TAGS = {
    "bedroom": TagSet(scenes=("guestroom",), concepts=("indoor",), objects=("bed",)),
    "living room": TagSet(scenes=("property interior",), concepts=("indoor",), objects=("couch",)),
    "bathroom": TagSet(scenes=("bathroom",), concepts=(), objects=()),
}


@dataclass(frozen=True)
class CameraPose:
    room_index: int
    position: tuple[float, float]
    heading: float  # radians in [0, 2*pi)


@dataclass(frozen=True)
class OracleScoreParams:
    """The subset of generator knobs the oracle scorer needs."""

    score_noise_sigma: float = 0.0
    overlap_heading_max: float = math.pi / 2
    seed: int = 0


@dataclass(frozen=True)
class SynthConfig:
    """Layout and noise knobs for one generated property."""

    rooms_per_type: dict[str, int]
    images_per_room: tuple[int, int] = (3, 3)
    score_noise_sigma: float = 0.0
    overlap_heading_max: float = math.pi / 2
    seed: int = 0
    bed_vocab: tuple[str, ...] = ("1 king bed", "2 twin beds", "1 queen bed")

    def __post_init__(self) -> None:
        rooms = {canonical_label(k): v for k, v in self.rooms_per_type.items()}
        unknown = set(rooms) - set(_ROOM_TAGS)
        if unknown:
            raise SchemaViolation(
                f"unsupported room types {sorted(unknown)}; "
                f"supported: {sorted(_ROOM_TAGS)}"
            )
        for name, count in rooms.items():
            if count < 1:
                raise SchemaViolation(f"room count for '{name}' must be >= 1")
        low, high = self.images_per_room
        if not (1 <= low <= high):
            raise SchemaViolation("images_per_room range must satisfy 1 <= low <= high")
        if self.score_noise_sigma < 0:
            raise SchemaViolation("score_noise_sigma must be >= 0")
        if self.overlap_heading_max <= 0:
            raise SchemaViolation("overlap_heading_max must be > 0")
        object.__setattr__(self, "rooms_per_type", rooms)
        object.__setattr__(
            self, "bed_vocab", tuple(canonical_label(b) for b in self.bed_vocab)
        )
        if not self.bed_vocab:
            raise SchemaViolation("bed_vocab must be non-empty")


@dataclass(frozen=True)
class GroundTruth:
    """Planted layout: pose, room, and bed type for every generated image."""

    image_rooms: dict[str, tuple[str, int]]  # image_id -> (room type, room index)
    image_poses: dict[str, CameraPose]
    bedroom_beds: dict[int, str]  # bedroom room index -> bed type

    def partition(self, room_type: str) -> list[list[str]]:
        """Image ids of each room of ``room_type``, in room-index order."""
        rooms: dict[int, list[str]] = {}
        for image_id, (rtype, rindex) in self.image_rooms.items():
            if rtype == room_type:
                rooms.setdefault(rindex, []).append(image_id)
        return [rooms[r] for r in sorted(rooms)]

    def bed_for_image(self, image_id: str) -> str | None:
        rtype, rindex = self.image_rooms[image_id]
        if rtype != "bedroom":
            return None
        return self.bedroom_beds.get(rindex)

    def image_beds(self) -> dict[str, str]:
        """Per-image true bed type (bedroom images only)."""
        out = {}
        for image_id, (rtype, rindex) in self.image_rooms.items():
            if rtype == "bedroom" and rindex in self.bedroom_beds:
                out[image_id] = self.bedroom_beds[rindex]
        return out


def generate_property(cfg: SynthConfig, property_id: str | None = None
                      ) -> tuple[PropertyCatalog, GroundTruth]:
    """Generate one property with tags consistent with the default rule table.

    Deterministic under ``cfg.seed``: the same config always yields the same
    catalog and ground truth.
    """
    rng = np.random.default_rng(cfg.seed)
    if property_id is None:
        property_id = f"synth-{cfg.seed}"

    images: list[ImageRecord] = []
    image_rooms: dict[str, tuple[str, int]] = {}
    image_poses: dict[str, CameraPose] = {}
    room_index = 0
    seq = 0
    low, high = cfg.images_per_room
    for room_type in sorted(cfg.rooms_per_type):
        for _ in range(cfg.rooms_per_type[room_type]):
            count = int(rng.integers(low, high + 1))
            x0 = room_index * _ROOM_SIZE
            # Headings concentrate around a per-room direction, spanning at
            # most one full overlap arc: pairs at the arc extremes still hit
            # the score floor (hard positives) while the room as a whole
            # stays cohesive enough for the partition to be recoverable.
            room_heading = rng.uniform(0.0, 2.0 * math.pi)
            half_arc = cfg.overlap_heading_max / 2.0
            for _ in range(count):
                seq += 1
                image_id = f"im{seq:04d}"
                pose = CameraPose(
                    room_index=room_index,
                    position=(
                        float(rng.uniform(x0, x0 + _ROOM_SIZE)),
                        float(rng.uniform(0.0, _ROOM_SIZE)),
                    ),
                    heading=float(
                        (room_heading + rng.uniform(-half_arc, half_arc)) % (2.0 * math.pi)
                    ),
                )
                images.append(
                    ImageRecord(
                        image_id=image_id,
                        uri=f"synthetic://{property_id}/{image_id}",
                        tags=_ROOM_TAGS[room_type],
                    )
                )
                image_rooms[image_id] = (room_type, room_index)
                image_poses[image_id] = pose
            room_index += 1

    bedroom_beds: dict[int, str] = {}
    bed_types: list[str] = []
    for image_id, (rtype, rindex) in image_rooms.items():
        if rtype == "bedroom" and rindex not in bedroom_beds:
            bed = cfg.bed_vocab[int(rng.integers(len(cfg.bed_vocab)))]
            bedroom_beds[rindex] = bed
    for rindex in sorted(bedroom_beds):
        bed_types.append(bedroom_beds[rindex])

    catalog = PropertyCatalog(
        property_id=property_id,
        images=tuple(images),
        metadata=PropertyMetadata(
            room_counts=dict(cfg.rooms_per_type), bed_types=tuple(bed_types)
        ),
    )
    truth = GroundTruth(
        image_rooms=image_rooms, image_poses=image_poses, bedroom_beds=bedroom_beds
    )
    return catalog, truth


def _wrapped_heading_difference(h1: float, h2: float) -> float:
    d = abs(h1 - h2) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def _pair_noise(p: CameraPose, q: CameraPose, cfg) -> float:
    """Seeded Gaussian noise keyed by the unordered pose pair.

    Hash-derived so the draw is symmetric in (p, q) and independent of the
    order pairs are evaluated in.
    """
    if cfg.score_noise_sigma == 0.0:
        return 0.0
    a = (p.room_index, p.position[0], p.position[1], p.heading)
    b = (q.room_index, q.position[0], q.position[1], q.heading)
    lo, hi = (a, b) if a <= b else (b, a)
    # decimal seed encoding copes with any integer width
    blob = str(cfg.seed).encode() + struct.pack("<q3d", *lo) + struct.pack("<q3d", *hi)
    digest = hashlib.blake2b(blob, digest_size=8).digest()
    sub_seed = int.from_bytes(digest, "little")
    return float(np.random.default_rng(sub_seed).normal(0.0, cfg.score_noise_sigma))


def synth_overlap_score(p: CameraPose, q: CameraPose, cfg) -> float:
    """Oracle overlap score for two planted camera poses.

    Cross-room pairs sit at a small base score; same-room pairs decay
    linearly with the wrapped heading difference down to a floor.  Additive
    seeded Gaussian noise, clamped to [0, 1]; symmetric in (p, q).
    ``cfg`` is any object with ``score_noise_sigma``, ``overlap_heading_max``
    and ``seed`` attributes (:class:`SynthConfig` or :class:`OracleScoreParams`).
    """
    if p.room_index != q.room_index:
        base = _CROSS_ROOM_SCORE
    else:
        delta = _wrapped_heading_difference(p.heading, q.heading)
        base = max(_SAME_ROOM_FLOOR, 1.0 - delta / cfg.overlap_heading_max)
    return float(min(1.0, max(0.0, base + _pair_noise(p, q, cfg))))


class SyntheticOracle(ScorerBackend):
    """Embedding backend whose head computes the oracle score from poses.

    The "embedding" of an image is its pose vector, so matrix builds pay the
    usual one-embed-per-image, one-head-per-pair accounting.
    """

    def __init__(self, poses: dict[str, CameraPose], cfg):
        self._poses = poses
        self._cfg = cfg

    @classmethod
    def from_truth(cls, truth: GroundTruth, params: OracleScoreParams | None = None
                   ) -> "SyntheticOracle":
        return cls(truth.image_poses, params or OracleScoreParams())

    def embed(self, image_id: str, uri: str) -> Embedding:
        pose = self._poses[image_id]
        return Embedding(
            image_id=image_id,
            vector=np.array(
                [pose.room_index, pose.position[0], pose.position[1], pose.heading],
                dtype=np.float32,
            ),
        )

    def head(self, e1: Embedding, e2: Embedding) -> float:
        return synth_overlap_score(
            self._poses[e1.image_id], self._poses[e2.image_id], self._cfg
        )


def oracle_matrix_scores(truth: GroundTruth, image_ids, cfg: SynthConfig) -> dict:
    """Noise-free-or-noisy oracle scores for every unordered pair of ids."""
    scores = {}
    ids = list(image_ids)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = ids[i], ids[j]
            key = (a, b) if a <= b else (b, a)
            scores[key] = synth_overlap_score(
                truth.image_poses[a], truth.image_poses[b], cfg
            )
    return scores


# ---------------------------------------------------------------------------
# surrogate embeddings + head weights

_SAME_ROOM_GAIN = 2.0  # room one-hot scale; 4x heading-term weight keeps rooms separated
_HEADING_GAIN = 1.0
_LOGIT_SHIFT = -2.0


def synth_embeddings_and_weights(
    truth: GroundTruth,
) -> tuple[list[Embedding], HeadWeights]:
    """Embeddings and head weights realizing the noise-free oracle ordering.

    Each vector is a scaled room one-hot plus (cos h, sin h), so the head's
    element-wise product sums to gain^2 * same_room + cos(heading delta); the
    sigmoid of that is strictly monotone in the oracle score wherever oracle
    scores differ materially, and every same-room pair outranks every
    cross-room pair.
    """
    n_rooms = max(r for _, r in truth.image_rooms.values()) + 1
    dim = n_rooms + 2
    embeddings = []
    for image_id in sorted(truth.image_poses):
        pose = truth.image_poses[image_id]
        vec = np.zeros(dim, dtype=np.float64)
        vec[pose.room_index] = _SAME_ROOM_GAIN
        vec[n_rooms] = _HEADING_GAIN * math.cos(pose.heading)
        vec[n_rooms + 1] = _HEADING_GAIN * math.sin(pose.heading)
        embeddings.append(Embedding(image_id=image_id, vector=vec))
    weights = HeadWeights(
        layers=(
            HeadLayer(
                weights=np.ones((1, dim), dtype=np.float64),
                bias=np.array([_LOGIT_SHIFT], dtype=np.float64),
                activation="sigmoid",
            ),
        )
    )
    return embeddings, weights


# ---------------------------------------------------------------------------
# pair-training manifests


@dataclass(frozen=True)
class PairCounts:
    self_supervised_pos: int
    negatives: int
    manual_slots: int = 0

    def __post_init__(self) -> None:
        if min(self.self_supervised_pos, self.negatives, self.manual_slots) < 0:
            raise SchemaViolation("pair counts must be >= 0")


def generate_pair_manifest(
    catalog: PropertyCatalog,
    truth: GroundTruth,
    counts: PairCounts,
    seed: int = 0,
) -> list[dict]:
    """Declarative training-pair rows for one property.

    The pretraining split holds balanced self-supervised positives (original
    image plus transform parameters) and cross-room negatives (same room
    type, different room).  The finetuning split reserves placeholder rows
    for manually annotated pairs and balances them with equally many
    self-supervised positives and negatives so earlier learning is retained.
    No pixels are touched: transforms are parameters only.
    """
    rng = np.random.default_rng(seed)
    image_ids = [img.image_id for img in catalog.images]

    rooms_by_type: dict[str, dict[int, list[str]]] = {}
    for image_id, (rtype, rindex) in truth.image_rooms.items():
        rooms_by_type.setdefault(rtype, {}).setdefault(rindex, []).append(image_id)
    negative_types = sorted(t for t, rooms in rooms_by_type.items() if len(rooms) >= 2)

    needs_negatives = counts.negatives + counts.manual_slots > 0
    if needs_negatives and not negative_types:
        raise InsufficientRooms(
            "negative pairs need a room type with at least two rooms"
        )

    def positive_row(split: str) -> dict:
        image_id = image_ids[int(rng.integers(len(image_ids)))]
        x0, y0 = rng.uniform(0.0, 0.3, size=2)
        w, h = rng.uniform(0.5, 1.0 - max(x0, y0), size=2)
        return {
            "split": split,
            "kind": "positive_self",
            "image_id": image_id,
            "transform": {
                "crop": [round(float(v), 4) for v in (x0, y0, x0 + w, y0 + h)],
                "flip": bool(rng.integers(2)),
                "brightness_delta": round(float(rng.uniform(-0.3, 0.3)), 4),
            },
        }

    def negative_row(split: str) -> dict:
        rtype = negative_types[int(rng.integers(len(negative_types)))]
        rooms = sorted(rooms_by_type[rtype])
        pick = rng.choice(len(rooms), size=2, replace=False)
        room_a, room_b = rooms[int(pick[0])], rooms[int(pick[1])]
        ids_a = rooms_by_type[rtype][room_a]
        ids_b = rooms_by_type[rtype][room_b]
        return {
            "split": split,
            "kind": "negative",
            "image_a": ids_a[int(rng.integers(len(ids_a)))],
            "image_b": ids_b[int(rng.integers(len(ids_b)))],
        }

    rows: list[dict] = []
    for _ in range(counts.self_supervised_pos):
        rows.append(positive_row("pretrain"))
    for _ in range(counts.negatives):
        rows.append(negative_row("pretrain"))
    for slot in range(counts.manual_slots):
        rows.append(
            {
                "split": "finetune",
                "kind": "manual_placeholder",
                "slot": f"manual-{slot + 1:04d}",
                "image_a": None,
                "image_b": None,
            }
        )
    for _ in range(counts.manual_slots):
        rows.append(positive_row("finetune"))
    for _ in range(counts.manual_slots):
        rows.append(negative_row("finetune"))
    return rows


def write_pair_manifest(rows: list[dict], path) -> None:
    """One JSON object per line, each carrying its ``split`` field."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# truth documents


def truth_to_document(truth: GroundTruth) -> dict:
    return {
        "images": {
            image_id: {
                "room_type": rtype,
                "room_index": rindex,
                "pose": {
                    "room_index": truth.image_poses[image_id].room_index,
                    "position": list(truth.image_poses[image_id].position),
                    "heading": truth.image_poses[image_id].heading,
                },
            }
            for image_id, (rtype, rindex) in truth.image_rooms.items()
        },
        "bedroom_beds": {str(k): v for k, v in truth.bedroom_beds.items()},
    }


def truth_from_document(doc, source: str = "<document>") -> GroundTruth:
    if not isinstance(doc, dict) or "images" not in doc:
        raise SchemaViolation(f"{source}: expected an object with an 'images' map")
    image_rooms = {}
    image_poses = {}
    for image_id, info in doc["images"].items():
        try:
            image_rooms[image_id] = (info["room_type"], int(info["room_index"]))
            pose = info["pose"]
            image_poses[image_id] = CameraPose(
                room_index=int(pose["room_index"]),
                position=(float(pose["position"][0]), float(pose["position"][1])),
                heading=float(pose["heading"]),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SchemaViolation(f"{source}.images['{image_id}']: {exc}") from exc
    beds_doc = doc.get("bedroom_beds", {})
    try:
        bedroom_beds = {int(k): canonical_label(v) for k, v in beds_doc.items()}
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"{source}.bedroom_beds: {exc}") from exc
    return GroundTruth(
        image_rooms=image_rooms, image_poses=image_poses, bedroom_beds=bedroom_beds
    )


def write_truth(truth: GroundTruth, path) -> None:
    try:
        Path(path).write_text(
            json.dumps(truth_to_document(truth), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_truth(path) -> GroundTruth:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from exc
    return truth_from_document(doc, source=str(path))
