"""Stage orchestration over property directories.

Each property lives in a directory of well-known file names (catalog.json,
scores.csv, embeddings.bin, weights.json, truth.json, grouping.json).
Stages hand off through these files: ``score`` materializes the pair score
CSV, ``cluster`` consumes it and writes the grouping document, ``map`` fills
in bedroom bed types.   Running the stages back to back is exactly what the
monolithic pipeline command does, so both paths produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import bedmap, synthgen
from .catalog import (
    Group,
    GroupingOutput,
    PropertyCatalog,
    load_catalog,
    load_grouping,
    validate_grouping_against_catalog,
    write_grouping,
)
from .clustering import Grouping, SpectralParams, remove_noise, spectral_cluster
from .errors import ConfigError, EmptyInventory
from .metrics import adjusted_rand_index, grouping_labels, property_correct, v_measure
from .overlap import (
    LinearHead,
    OverlapMatrix,
    PrecomputedScores,
    build_overlap_matrix,
    matrix_to_pair_scores,
    write_pair_scores,
)
from .room_typing import RoomType, RuleTable, partition_by_room_type

CATALOG_FILE = "catalog.json"
SCORES_FILE = "scores.csv"
EMBEDDINGS_FILE = "embeddings.bin"
WEIGHTS_FILE = "weights.json"
TRUTH_FILE = "truth.json"
GROUPING_FILE = "grouping.json"
METRICS_FILE = "metrics.json"
MANIFEST_FILE = "pairs.jsonl"

BACKENDS = ("precomputed", "head", "oracle")
PREDICTORS = ("oracle", "first-option", "remote")


@dataclass
class PipelineConfig:
    """Resolved settings shared by the pipeline stages."""

    backend: str = "precomputed"
    tau: float = 0.5
    seed: int = 0
    noise: float = 0.0  # oracle backend score noise
    predictor: str = "first-option"
    endpoint: str | None = None
    retries: int = 2
    rules: RuleTable | None = None
    out_root: Path | None = None
    diagnostics: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"--backend must be one of {BACKENDS}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"--predictor must be one of {PREDICTORS}")
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError("--tau must be in (0, 1]")
        if self.predictor == "remote" and not self.endpoint:
            raise ConfigError("--predictor remote requires --endpoint URL")

    def diag(self, **record) -> None:
        self.diagnostics.append(record)


def resolve_property_dir(path_like) -> Path:
    """Accept a property directory or a direct path to its catalog file."""
    path = Path(path_like)
    if path.is_file():
        return path.parent
    return path


def artifacts_dir(prop_dir: Path, cfg: PipelineConfig) -> Path:
    if cfg.out_root is None:
        return prop_dir
    out = Path(cfg.out_root) / prop_dir.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input_file(prop_dir: Path, cfg: PipelineConfig, name: str) -> Path:
    """Look for a stage input in the output dir first, then the property dir."""
    out = artifacts_dir(prop_dir, cfg)
    candidate = out / name
    if candidate.exists():
        return candidate
    return prop_dir / name


def _require_file(path: Path, flag_hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{flag_hint}: required file not found: {path}")
    return path


def _load_inputs(prop_dir: Path, cfg: PipelineConfig) -> PropertyCatalog:
    catalog_path = prop_dir / CATALOG_FILE
    if not catalog_path.exists():
        raise ConfigError(f"input '{prop_dir}': no {CATALOG_FILE} found")
    return load_catalog(catalog_path)


def _make_backend(prop_dir: Path, cfg: PipelineConfig):
    if cfg.backend == "precomputed":
        path = _require_file(
            _input_file(prop_dir, cfg, SCORES_FILE), "--backend precomputed"
        )
        return PrecomputedScores.from_csv(path)
    if cfg.backend == "head":
        embeddings = _require_file(
            _input_file(prop_dir, cfg, EMBEDDINGS_FILE), "--backend head (--embeddings)"
        )
        weights = _require_file(
            _input_file(prop_dir, cfg, WEIGHTS_FILE), "--backend head (--weights)"
        )
        return LinearHead.from_files(embeddings, weights)
    truth_path = _require_file(_input_file(prop_dir, cfg, TRUTH_FILE), "--backend oracle")
    truth = synthgen.load_truth(truth_path)
    params = synthgen.OracleScoreParams(
        score_noise_sigma=cfg.noise, seed=cfg.seed
    )
    return synthgen.SyntheticOracle.from_truth(truth, params)


def _typed_buckets(catalog: PropertyCatalog, cfg: PipelineConfig):
    """(room type name, k, image ids) for every room type with images.

    Room types without a metadata count are not clustered; their images land
    in the unassigned bucket.
    """
    partition = partition_by_room_type(catalog, cfg.rules)
    buckets = []
    unassigned: list[str] = []
    for room_type in RoomType:
        ids = partition[room_type]
        if not ids:
            continue
        k = catalog.metadata.room_counts.get(room_type.value)
        if k is None:
            unassigned.extend(ids)
            continue
        buckets.append((room_type.value, k, ids))
    return buckets, unassigned


# ---------------------------------------------------------------------------
# stages


def score_property(prop_dir: Path, cfg: PipelineConfig) -> Path:
    """Compute within-room-type pair scores and write the score CSV."""
    catalog = _load_inputs(prop_dir, cfg)
    backend = _make_backend(prop_dir, cfg)
    uris = catalog.image_uris()
    buckets, _ = _typed_buckets(catalog, cfg)
    pair_scores: dict[tuple[str, str], float] = {}
    for room_type, _, ids in buckets:
        matrix, accounting = build_overlap_matrix(ids, backend, uris=uris)
        pair_scores.update(matrix_to_pair_scores(matrix))
        cfg.diag(
            stage="score",
            property_id=catalog.property_id,
            room_type=room_type,
            images=len(ids),
            encoder_calls=accounting.encoder_calls,
            head_calls=accounting.head_calls,
        )
    out = artifacts_dir(prop_dir, cfg) / SCORES_FILE
    write_pair_scores(pair_scores, out)
    return out


def cluster_property(prop_dir: Path, cfg: PipelineConfig) -> Path:
    """Cluster each room type from the score CSV and write the grouping."""
    catalog = _load_inputs(prop_dir, cfg)
    scores_path = _require_file(
        _input_file(prop_dir, cfg, SCORES_FILE), "--backend precomputed (scores.csv)"
    )
    stored = PrecomputedScores.from_csv(scores_path)
    buckets, unassigned = _typed_buckets(catalog, cfg)

    room_types: dict[str, list[Group]] = {}
    for room_type, k, ids in buckets:
        matrix, _ = build_overlap_matrix(ids, stored)
        params = SpectralParams(k=k, seed=cfg.seed)
        grouping = spectral_cluster(matrix, params)
        grouping = remove_noise(grouping, matrix, cfg.tau)
        room_types[room_type] = _materialize_groups(room_type, grouping, matrix)
        unassigned.extend(grouping.unassigned)
        cfg.diag(
            stage="cluster",
            property_id=catalog.property_id,
            room_type=room_type,
            k=k,
            images=len(ids),
            pruned=len(grouping.unassigned),
        )

    output = GroupingOutput(
        property_id=catalog.property_id,
        room_types=room_types,
        unassigned=tuple(unassigned),
    )
    validate_grouping_against_catalog(output, catalog)
    out = artifacts_dir(prop_dir, cfg) / GROUPING_FILE
    write_grouping(output, out)
    return out


def _materialize_groups(room_type: str, grouping: Grouping, matrix: OverlapMatrix
                        ) -> list[Group]:
    groups = []
    for i, members in enumerate(grouping.groups, start=1):
        groups.append(
            Group(
                group_id=f"{room_type}-{i}",
                image_ids=tuple(members),
                mean_internal_score=_mean_internal(members, matrix),
            )
        )
    return groups


def _mean_internal(members: list[str], matrix: OverlapMatrix) -> float:
    if not members:
        return 0.0
    if len(members) == 1:
        return 1.0
    idx = [matrix.index_of(m) for m in members]
    values = [matrix.scores[i, j] for i, j in combinations(idx, 2)]
    return float(np.mean(values))


def map_property(prop_dir: Path, cfg: PipelineConfig) -> Path:
    """Assign bed types to bedroom groups and rewrite the grouping document."""
    catalog = _load_inputs(prop_dir, cfg)
    grouping_path = _require_file(
        _input_file(prop_dir, cfg, GROUPING_FILE), "map (grouping.json)"
    )
    output = load_grouping(grouping_path)

    bedroom_groups = [
        g for g in output.room_types.get("bedroom", []) if g.image_ids
    ]
    if bedroom_groups:
        if not catalog.metadata.bed_types:
            raise EmptyInventory(
                f"property '{catalog.property_id}': bedroom groups exist "
                "but metadata lists no bed types"
            )
        inventory = bedmap.build_frequency_dict(catalog.metadata.bed_types)
        uris = catalog.image_uris()
        groups = [
            bedmap.BedroomGroup(
                group_id=g.group_id,
                image_ids=tuple(g.image_ids),
                image_uris=tuple(uris.get(i, "") for i in g.image_ids),
            )
            for g in bedroom_groups
        ]
        predictor = _make_predictor(prop_dir, cfg)
        assignment = bedmap.map_spaces(groups, inventory, predictor)
        for group in bedroom_groups:
            group.bed_type = assignment.assignments.get(group.group_id)
        cfg.diag(
            stage="map",
            property_id=catalog.property_id,
            groups=len(bedroom_groups),
            leftover=assignment.leftover,
            trace=[
                {"group_id": t.group_id, "options": list(t.options), "choice": t.choice}
                for t in assignment.trace
            ],
        )

    out = artifacts_dir(prop_dir, cfg) / GROUPING_FILE
    write_grouping(output, out)
    return out


def _make_predictor(prop_dir: Path, cfg: PipelineConfig) -> bedmap.PredictorBackend:
    if cfg.predictor == "first-option":
        return bedmap.FirstOption()
    if cfg.predictor == "oracle":
        truth_path = _require_file(
            _input_file(prop_dir, cfg, TRUTH_FILE), "--predictor oracle"
        )
        truth = synthgen.load_truth(truth_path)
        return bedmap.OracleFromTruth(truth.image_beds())
    return bedmap.RemoteService(cfg.endpoint, retries=cfg.retries)


def run_property(prop_dir: Path, cfg: PipelineConfig) -> Path:
    """The full pipeline for one property: score, cluster, map."""
    score_property(prop_dir, cfg)
    cluster_property(prop_dir, cfg)
    return map_property(prop_dir, cfg)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_property(prop_dir: Path, cfg: PipelineConfig) -> dict:
    """Metric row for one property: clustering metrics plus exact-match grade."""
    grouping_path = _require_file(
        _input_file(prop_dir, cfg, GROUPING_FILE), "eval (grouping.json)"
    )
    truth_path = _require_file(_input_file(prop_dir, cfg, TRUTH_FILE), "eval (truth.json)")
    pred = load_grouping(grouping_path)
    truth = synthgen.load_truth(truth_path)

    per_type = {}
    for room_type in pred.room_types:
        truth_vec, pred_vec = grouping_labels(pred, truth, room_type)
        if len(truth_vec) < 2:
            continue
        ari = adjusted_rand_index(truth_vec, pred_vec)
        homogeneity, completeness, v = v_measure(truth_vec, pred_vec)
        per_type[room_type] = {
            "ari": ari,
            "ari_normalized": (ari + 1.0) / 2.0,
            "homogeneity": homogeneity,
            "completeness": completeness,
            "v_measure": v,
        }
    row = {
        "property_id": pred.property_id,
        "bedrooms": len(truth.partition("bedroom")),
        "room_types": per_type,
        "correct": property_correct(pred, truth),
    }
    if per_type:
        for key in ("ari", "ari_normalized", "homogeneity", "completeness", "v_measure"):
            row[key] = float(np.mean([m[key] for m in per_type.values()]))
    return row


def _bedroom_bucket(count: int) -> str:
    return str(count) if count <= 4 else ">4"


def aggregate_rows(rows: list[dict]) -> dict:
    """Mean metrics grouped by bedroom count, plus overall means and accuracy."""
    by_bucket: dict[str, list[dict]] = {}
    for row in rows:
        by_bucket.setdefault(_bedroom_bucket(row["bedrooms"]), []).append(row)

    def _means(subset: list[dict]) -> dict:
        scored = [r for r in subset if "ari" in r]
        out = {"properties": len(subset)}
        if scored:
            for key in ("ari", "ari_normalized", "homogeneity", "completeness", "v_measure"):
                out[key] = float(np.mean([r[key] for r in scored]))
        out["property_accuracy"] = float(np.mean([r["correct"] for r in subset]))
        return out

    return {
        "by_bedrooms": {bucket: _means(subset) for bucket, subset in sorted(by_bucket.items())},
        "overall": _means(rows),
    }
