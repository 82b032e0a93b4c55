"""Command-line entry points for the room grouping engine.

Subcommands run the whole pipeline or a single stage with file handoff:

    roomgroup synth     generate synthetic property directories
    roomgroup score     pair score CSV per property
    roomgroup cluster   spectral grouping from the score CSV
    roomgroup map       bed-type assignment for bedroom groups
    roomgroup pipeline  score + cluster + map
    roomgroup eval      metrics document from groupings vs ground truth
    roomgroup pairs     declarative pair-training manifest

Settings come from defaults, then an optional key = value config file
(``--config roomgroup.toml``), then explicit flags.  Human summaries go to
stdout; structured JSON diagnostics go to stderr.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 remote failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline as pl
from . import synthgen
from .catalog import load_catalog, write_catalog
from .errors import ConfigError, RemoteFailure, RoomGroupError
from .overlap import write_embedding_cache, write_head_weights, write_pair_scores
from .room_typing import load_rule_table

_CONFIG_KEYS = {
    "backend", "tau", "seed", "noise", "predictor", "endpoint", "retries",
    "rules", "jobs", "out",
}


def load_config_file(path) -> dict:
    """Parse a flat ``key = value`` config document (comments with '#')."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"--config {path}: {exc}") from exc
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"--config {path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"--config {path}:{lineno}: unknown key '{key}'")
        value = value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value.strip("\"'")
    return values


def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    """The full CLI; ``config_defaults`` (from ``--config``) replaces built-in
    defaults on every subcommand while explicit flags still win."""
    parser = argparse.ArgumentParser(
        prog="roomgroup",
        description="Group property images into room spaces and map bed types.",
    )
    parser.add_argument("--config", metavar="FILE", help="key = value settings file")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: list[argparse.ArgumentParser] = []

    def add_common(p: argparse.ArgumentParser, *, jobs: bool = False) -> None:
        p.add_argument("inputs", nargs="+", metavar="PROPERTY_DIR",
                       help="property directory (or its catalog.json)")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="write outputs under DIR/<property> instead of in place")
        p.add_argument("--seed", type=int, default=0, help="single source of randomness")
        if jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="properties processed in parallel")

    def add_scoring(p: argparse.ArgumentParser) -> None:
        p.add_argument("--backend", choices=pl.BACKENDS, default="precomputed")
        p.add_argument("--noise", type=float, default=0.0,
                       help="oracle backend: score noise sigma")

    def add_rules(p: argparse.ArgumentParser) -> None:
        p.add_argument("--rules", metavar="FILE", default=None,
                       help="room-typing rules document (default: built-in table)")

    def add_clustering(p: argparse.ArgumentParser) -> None:
        p.add_argument("--tau", type=float, default=0.5,
                       help="noise-removal fraction of the best group mean")
        add_rules(p)

    def add_mapping(p: argparse.ArgumentParser) -> None:
        p.add_argument("--predictor", choices=pl.PREDICTORS, default="first-option")
        p.add_argument("--endpoint", metavar="URL", default=None)
        p.add_argument("--retries", type=int, default=2)

    p_pipeline = sub.add_parser("pipeline", help="score + cluster + map")
    add_common(p_pipeline, jobs=True)
    add_scoring(p_pipeline)
    add_clustering(p_pipeline)
    add_mapping(p_pipeline)
    subparsers.append(p_pipeline)

    p_score = sub.add_parser("score", help="write the pair score CSV")
    add_common(p_score)
    add_scoring(p_score)
    add_rules(p_score)
    subparsers.append(p_score)

    p_cluster = sub.add_parser("cluster", help="spectral grouping from scores.csv")
    add_common(p_cluster)
    add_clustering(p_cluster)
    subparsers.append(p_cluster)

    p_map = sub.add_parser("map", help="assign bed types to bedroom groups")
    add_common(p_map)
    add_mapping(p_map)
    subparsers.append(p_map)

    p_eval = sub.add_parser("eval", help="metrics from groupings vs ground truth")
    add_common(p_eval)
    p_eval.add_argument("--report", metavar="FILE", default=pl.METRICS_FILE,
                        help="metrics document path")
    subparsers.append(p_eval)

    p_synth = sub.add_parser("synth", help="generate synthetic property directories")
    p_synth.add_argument("--rooms", required=True, metavar="SPEC",
                         help="e.g. bedroom=4,bathroom=2")
    p_synth.add_argument("--images-per-room", default="2..5", metavar="LO..HI")
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--bed-vocab", default="1 King Bed,2 Twin Beds,1 Queen Bed",
                         metavar="CSV")
    p_synth.add_argument("--count", type=int, default=1, help="number of properties")
    p_synth.add_argument("--out", required=True, metavar="DIR")
    subparsers.append(p_synth)

    p_pairs = sub.add_parser("pairs", help="write a pair-training manifest")
    add_common(p_pairs)
    p_pairs.add_argument("--positives", type=int, default=100,
                         help="self-supervised positive pairs (pretrain split)")
    p_pairs.add_argument("--negatives", type=int, default=100,
                         help="cross-room negative pairs (pretrain split)")
    p_pairs.add_argument("--manual-slots", type=int, default=0,
                         help="manual-pair placeholders (finetune split)")
    subparsers.append(p_pairs)

    if config_defaults:
        # subparsers parse into a fresh namespace, so each needs the defaults
        for p in [parser, *subparsers]:
            p.set_defaults(**config_defaults)
    return parser


def _diag(record: dict) -> None:
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")


def _make_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig(
        backend=getattr(args, "backend", "precomputed"),
        tau=getattr(args, "tau", 0.5),
        seed=getattr(args, "seed", 0),
        noise=getattr(args, "noise", 0.0),
        predictor=getattr(args, "predictor", "first-option"),
        endpoint=getattr(args, "endpoint", None),
        retries=getattr(args, "retries", 2),
        out_root=Path(args.out) if getattr(args, "out", None) else None,
    )
    cfg.validate()
    rules_path = getattr(args, "rules", None)
    if rules_path:
        cfg.rules = load_rule_table(rules_path)
    return cfg


def _property_dirs(args) -> list[Path]:
    dirs = [pl.resolve_property_dir(p) for p in args.inputs]
    for d in dirs:
        if not d.exists():
            raise ConfigError(f"input not found: {d}")
    return dirs


def _run_stage(args, stage) -> int:
    cfg = _make_config(args)
    dirs = _property_dirs(args)
    jobs = max(1, getattr(args, "jobs", 1))

    def run_one(prop_dir: Path):
        local = pl.PipelineConfig(**{**cfg.__dict__, "diagnostics": []})
        out = stage(prop_dir, local)
        return prop_dir, out, local.diagnostics

    if jobs > 1 and len(dirs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, dirs))
    else:
        results = [run_one(d) for d in dirs]

    # Deterministic reporting order regardless of scheduling.
    for prop_dir, out, diagnostics in sorted(results, key=lambda r: str(r[0])):
        for record in diagnostics:
            _diag(record)
        print(f"{prop_dir}: wrote {out}")
    return 0


def cmd_pipeline(args) -> int:
    return _run_stage(args, pl.run_property)


def cmd_score(args) -> int:
    return _run_stage(args, pl.score_property)


def cmd_cluster(args) -> int:
    return _run_stage(args, pl.cluster_property)


def cmd_map(args) -> int:
    return _run_stage(args, pl.map_property)


def cmd_eval(args) -> int:
    cfg = _make_config(args)
    rows = [pl.evaluate_property(d, cfg) for d in _property_dirs(args)]
    rows.sort(key=lambda r: r["property_id"])
    report = {"properties": rows, "aggregates": pl.aggregate_rows(rows)}
    report_path = Path(args.report)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    overall = report["aggregates"]["overall"]
    print(f"evaluated {len(rows)} properties -> {report_path}")
    if "ari_normalized" in overall:
        print(f"mean normalized ARI {overall['ari_normalized']:.4f}, "
              f"mean V-measure {overall['v_measure']:.4f}")
    print(f"property accuracy {overall['property_accuracy']:.4f}")
    return 0


def _parse_rooms(spec: str) -> dict[str, int]:
    rooms = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, count = part.partition("=")
        try:
            rooms[name.strip()] = int(count)
        except ValueError as exc:
            raise ConfigError(f"--rooms: bad entry '{part}' (want name=count)") from exc
    if not rooms:
        raise ConfigError("--rooms: at least one room type required")
    return rooms


def _parse_range(spec: str) -> tuple[int, int]:
    low, sep, high = spec.partition("..")
    try:
        if not sep:
            value = int(spec)
            return value, value
        return int(low), int(high)
    except ValueError as exc:
        raise ConfigError(f"--images-per-room: bad range '{spec}' (want LO..HI)") from exc


def cmd_synth(args) -> int:
    rooms = _parse_rooms(args.rooms)
    images_per_room = _parse_range(args.images_per_room)
    bed_vocab = tuple(v.strip() for v in args.bed_vocab.split(",") if v.strip())
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    for i, seq in enumerate(seeds, start=1):
        cfg = synthgen.SynthConfig(
            rooms_per_type=rooms,
            images_per_room=images_per_room,
            score_noise_sigma=args.noise,
            seed=int(seq.generate_state(1, np.uint64)[0]),
            bed_vocab=bed_vocab,
        )
        prop_dir = out_root / f"prop-{i:04d}"
        prop_dir.mkdir(parents=True, exist_ok=True)
        property_id = f"synth-{args.seed}-{i:04d}"
        write_property_dir(cfg, prop_dir, property_id)
        print(f"{prop_dir}: generated {property_id}")
    return 0


def write_property_dir(cfg: synthgen.SynthConfig, prop_dir: Path,
                       property_id: str | None = None) -> synthgen.GroundTruth:
    """Materialize one synthetic property: catalog, truth, scores,
    embeddings, and head weights."""
    prop_dir = Path(prop_dir)
    prop_dir.mkdir(parents=True, exist_ok=True)
    catalog, truth = synthgen.generate_property(cfg, property_id)
    write_catalog(catalog, prop_dir / pl.CATALOG_FILE)
    synthgen.write_truth(truth, prop_dir / pl.TRUTH_FILE)

    pair_scores: dict[tuple[str, str], float] = {}
    for room_type in sorted(cfg.rooms_per_type):
        ids = [i for members in truth.partition(room_type) for i in members]
        pair_scores.update(synthgen.oracle_matrix_scores(truth, ids, cfg))
    write_pair_scores(pair_scores, prop_dir / pl.SCORES_FILE)

    embeddings, weights = synthgen.synth_embeddings_and_weights(truth)
    write_embedding_cache(embeddings, prop_dir / pl.EMBEDDINGS_FILE)
    write_head_weights(weights, prop_dir / pl.WEIGHTS_FILE)
    return truth


def cmd_pairs(args) -> int:
    cfg = _make_config(args)
    counts = synthgen.PairCounts(
        self_supervised_pos=args.positives,
        negatives=args.negatives,
        manual_slots=args.manual_slots,
    )
    for prop_dir in _property_dirs(args):
        catalog_path = prop_dir / pl.CATALOG_FILE
        if not catalog_path.exists():
            raise ConfigError(f"input '{prop_dir}': no {pl.CATALOG_FILE} found")
        truth_path = prop_dir / pl.TRUTH_FILE
        if not truth_path.exists():
            raise ConfigError(f"pairs: required file not found: {truth_path}")
        rows = synthgen.generate_pair_manifest(
            load_catalog(catalog_path), synthgen.load_truth(truth_path), counts,
            seed=args.seed,
        )
        out = pl.artifacts_dir(prop_dir, cfg) / pl.MANIFEST_FILE
        synthgen.write_pair_manifest(rows, out)
        print(f"{prop_dir}: wrote {out} ({len(rows)} rows)")
    return 0


_COMMANDS = {
    "pipeline": cmd_pipeline,
    "score": cmd_score,
    "cluster": cmd_cluster,
    "map": cmd_map,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "pairs": cmd_pairs,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    # Apply config-file values as defaults before the real parse so explicit
    # flags still win.
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        config_defaults = load_config_file(known.config) if known.config else None
        parser = build_parser(config_defaults)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _diag({"level": "error", "code": type(exc).__name__, "message": str(exc)})
        return 2
    except RemoteFailure as exc:
        _diag({"level": "error", "code": type(exc).__name__, "message": str(exc)})
        return 4
    except RoomGroupError as exc:
        _diag({"level": "error", "code": type(exc).__name__, "message": str(exc)})
        return 3
    except Exception as exc:  # malformed input must never produce a traceback
        _diag({"level": "error", "code": type(exc).__name__, "message": str(exc)})
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
