import itertools
import json
import math

import numpy as np
import pytest

from roomgroup.clustering import SpectralParams, spectral_cluster
from roomgroup.errors import InsufficientRooms, SchemaViolation
from roomgroup.overlap import build_overlap_matrix, head_score, read_embedding_cache, \
    write_embedding_cache
from roomgroup.room_typing import RoomType, classify_room_type
from roomgroup.synthgen import (
    CameraPose,
    GroundTruth,
    PairCounts,
    SynthConfig,
    SyntheticOracle,
    generate_pair_manifest,
    generate_property,
    load_truth,
    synth_embeddings_and_weights,
    synth_overlap_score,
    truth_from_document,
    truth_to_document,
    write_truth,
)


class TestGenerateProperty:
    def test_four_bedrooms_three_images_each(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 4}, images_per_room=(3, 3), seed=9)
        catalog, truth = generate_property(cfg)
        assert len(catalog.images) == 12
        partition = truth.partition("bedroom")
        assert len(partition) == 4
        assert all(len(room) == 3 for room in partition)
        assert catalog.metadata.room_counts == {"bedroom": 4}
        assert len(catalog.metadata.bed_types) == 4

    def test_same_seed_identical(self):
        cfg = SynthConfig(
            rooms_per_type={"bedroom": 2, "bathroom": 1},
            images_per_room=(2, 5),
            seed=1234,
        )
        a_catalog, a_truth = generate_property(cfg)
        b_catalog, b_truth = generate_property(cfg)
        assert a_catalog == b_catalog
        assert a_truth == b_truth

    def test_different_seed_differs(self):
        base = dict(rooms_per_type={"bedroom": 2}, images_per_room=(2, 5))
        a, _ = generate_property(SynthConfig(seed=1, **base))
        b, _ = generate_property(SynthConfig(seed=2, **base))
        assert a != b

    def test_singleton_bed_vocab(self):
        cfg = SynthConfig(
            rooms_per_type={"bedroom": 2}, bed_vocab=("1 King Bed",), seed=3
        )
        catalog, truth = generate_property(cfg)
        assert catalog.metadata.bed_types == ("1 king bed", "1 king bed")
        assert set(truth.bedroom_beds.values()) == {"1 king bed"}

    def test_tags_classify_back_to_planted_type(self):
        cfg = SynthConfig(
            rooms_per_type={"bedroom": 2, "living room": 1, "bathroom": 2},
            images_per_room=(1, 3),
            seed=77,
        )
        catalog, truth = generate_property(cfg)
        for img in catalog.images:
            room_type, _ = truth.image_rooms[img.image_id]
            assert classify_room_type(img.tags) is RoomType(room_type)

    def test_unsupported_room_type_rejected(self):
        with pytest.raises(SchemaViolation, match="garage"):
            SynthConfig(rooms_per_type={"garage": 1})

    def test_bad_images_per_room_rejected(self):
        with pytest.raises(SchemaViolation):
            SynthConfig(rooms_per_type={"bedroom": 1}, images_per_room=(3, 2))


class TestOverlapScore:
    def _pose(self, room, heading):
        return CameraPose(room_index=room, position=(0.5, 0.5), heading=heading)

    def test_same_room_zero_delta_is_one(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, seed=0)
        assert synth_overlap_score(self._pose(0, 1.0), self._pose(0, 1.0), cfg) == 1.0

    def test_different_rooms(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, seed=0)
        assert synth_overlap_score(self._pose(0, 1.0), self._pose(1, 1.0), cfg) == 0.05

    def test_floor_at_max_heading_difference(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, seed=0)
        theta = cfg.overlap_heading_max
        assert synth_overlap_score(self._pose(0, 0.0), self._pose(0, theta), cfg) == 0.1

    def test_heading_wraps_around(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, seed=0)
        a = synth_overlap_score(self._pose(0, 0.1), self._pose(0, 2 * math.pi - 0.1), cfg)
        b = synth_overlap_score(self._pose(0, 0.0), self._pose(0, 0.2), cfg)
        assert a == pytest.approx(b, abs=1e-12)

    def test_noise_is_symmetric_and_deterministic(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, score_noise_sigma=0.1, seed=5)
        p, q = self._pose(0, 0.3), self._pose(0, 1.2)
        s1 = synth_overlap_score(p, q, cfg)
        s2 = synth_overlap_score(q, p, cfg)
        s3 = synth_overlap_score(p, q, cfg)
        assert s1 == s2 == s3
        noiseless = SynthConfig(rooms_per_type={"bedroom": 1}, seed=5)
        assert s1 != synth_overlap_score(p, q, noiseless)

    def test_scores_clamped_to_unit_interval(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, score_noise_sigma=2.0, seed=6)
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = self._pose(int(rng.integers(2)), float(rng.uniform(0, 2 * math.pi)))
            q = self._pose(int(rng.integers(2)), float(rng.uniform(0, 2 * math.pi)))
            assert 0.0 <= synth_overlap_score(p, q, cfg) <= 1.0


class TestOracleBackend:
    def test_matrix_satisfies_invariants_for_many_seeds(self):
        for seed in range(5):
            cfg = SynthConfig(
                rooms_per_type={"bedroom": 3},
                images_per_room=(2, 4),
                score_noise_sigma=0.15,
                seed=seed,
            )
            catalog, truth = generate_property(cfg)
            ids = [im.image_id for im in catalog.images]
            matrix, acct = build_overlap_matrix(ids, SyntheticOracle(truth.image_poses, cfg))
            # construction validates symmetry, diagonal, and range
            assert acct.encoder_calls == len(ids)
            assert acct.head_calls == len(ids) * (len(ids) - 1) // 2

    def test_keystone_exact_recovery_noise_free(self):
        for seed in (11, 22, 33):
            cfg = SynthConfig(
                rooms_per_type={"bedroom": 4}, images_per_room=(2, 6), seed=seed
            )
            catalog, truth = generate_property(cfg)
            ids = [im.image_id for im in catalog.images]
            matrix, _ = build_overlap_matrix(ids, SyntheticOracle(truth.image_poses, cfg))
            grouping = spectral_cluster(matrix, SpectralParams(k=4, seed=seed))
            assert {frozenset(g) for g in grouping.groups} == \
                   {frozenset(m) for m in truth.partition("bedroom")}


class TestSurrogateEmbeddings:
    def test_rank_agreement_with_oracle(self):
        cfg = SynthConfig(
            rooms_per_type={"bedroom": 3, "bathroom": 2}, images_per_room=(2, 4), seed=13
        )
        catalog, truth = generate_property(cfg)
        embeddings, weights = synth_embeddings_and_weights(truth)
        by_id = {e.image_id: e for e in embeddings}
        ids = [im.image_id for im in catalog.images]
        oracle = {}
        surrogate = {}
        for a, b in itertools.combinations(ids, 2):
            oracle[(a, b)] = synth_overlap_score(
                truth.image_poses[a], truth.image_poses[b], cfg
            )
            surrogate[(a, b)] = head_score(by_id[a], by_id[b], weights)
        for i in ids:
            pairs = [key for key in oracle if i in key]
            for p1, p2 in itertools.combinations(pairs, 2):
                if oracle[p1] - oracle[p2] > 0.1:
                    assert surrogate[p1] > surrogate[p2]
                elif oracle[p2] - oracle[p1] > 0.1:
                    assert surrogate[p2] > surrogate[p1]

    def test_same_room_aligned_beats_any_cross_room(self):
        poses = {
            "a": CameraPose(0, (0.1, 0.1), 1.0),
            "b": CameraPose(0, (0.9, 0.9), 1.0),
            "c": CameraPose(1, (0.5, 0.5), 1.0),  # same heading, other room
            "d": CameraPose(1, (0.2, 0.2), 4.0),
        }
        truth = GroundTruth(
            image_rooms={"a": ("bedroom", 0), "b": ("bedroom", 0),
                         "c": ("bedroom", 1), "d": ("bedroom", 1)},
            image_poses=poses,
            bedroom_beds={0: "1 king bed", 1: "2 twin beds"},
        )
        embeddings, weights = synth_embeddings_and_weights(truth)
        by_id = {e.image_id: e for e in embeddings}
        aligned_same_room = head_score(by_id["a"], by_id["b"], weights)
        for a, b in (("a", "c"), ("a", "d"), ("b", "c"), ("b", "d")):
            assert aligned_same_room > head_score(by_id[a], by_id[b], weights)

    def test_symmetry_and_cache_round_trip(self, tmp_path):
        cfg = SynthConfig(rooms_per_type={"bedroom": 2}, seed=21)
        _, truth = generate_property(cfg)
        embeddings, weights = synth_embeddings_and_weights(truth)
        path = tmp_path / "cache.bin"
        write_embedding_cache(embeddings, path)
        loaded = {e.image_id: e for e in read_embedding_cache(path)}
        ids = sorted(loaded)
        for a, b in itertools.combinations(ids, 2):
            assert head_score(loaded[a], loaded[b], weights) == \
                   head_score(loaded[b], loaded[a], weights)


class TestPairManifest:
    def _property(self, seed=31, bedrooms=3):
        cfg = SynthConfig(
            rooms_per_type={"bedroom": bedrooms}, images_per_room=(2, 4), seed=seed
        )
        return generate_property(cfg)

    def test_balanced_pretrain_counts(self):
        catalog, truth = self._property()
        rows = generate_pair_manifest(
            catalog, truth, PairCounts(self_supervised_pos=100, negatives=100), seed=1
        )
        assert len(rows) == 200
        kinds = [r["kind"] for r in rows]
        assert kinds.count("positive_self") == 100
        assert kinds.count("negative") == 100
        assert all(r["split"] == "pretrain" for r in rows)

    def test_single_room_negatives_impossible(self):
        catalog, truth = self._property(bedrooms=1)
        with pytest.raises(InsufficientRooms):
            generate_pair_manifest(
                catalog, truth, PairCounts(self_supervised_pos=0, negatives=5), seed=1
            )

    def test_negative_rows_cross_room_same_type(self):
        catalog, truth = self._property()
        rows = generate_pair_manifest(
            catalog, truth, PairCounts(self_supervised_pos=0, negatives=50), seed=2
        )
        for row in rows:
            type_a, room_a = truth.image_rooms[row["image_a"]]
            type_b, room_b = truth.image_rooms[row["image_b"]]
            assert type_a == type_b
            assert room_a != room_b

    def test_finetune_split_balances_manual_slots(self):
        catalog, truth = self._property()
        rows = generate_pair_manifest(
            catalog, truth,
            PairCounts(self_supervised_pos=10, negatives=10, manual_slots=4),
            seed=3,
        )
        finetune = [r for r in rows if r["split"] == "finetune"]
        kinds = [r["kind"] for r in finetune]
        assert kinds.count("manual_placeholder") == 4
        assert kinds.count("positive_self") == 4
        assert kinds.count("negative") == 4

    def test_transforms_are_declarative_and_bounded(self):
        catalog, truth = self._property()
        rows = generate_pair_manifest(
            catalog, truth, PairCounts(self_supervised_pos=50, negatives=0), seed=4
        )
        for row in rows:
            crop = row["transform"]["crop"]
            assert 0.0 <= crop[0] < crop[2] <= 1.0
            assert 0.0 <= crop[1] < crop[3] <= 1.0
            assert -0.3 <= row["transform"]["brightness_delta"] <= 0.3

    def test_manifest_deterministic(self):
        catalog, truth = self._property()
        counts = PairCounts(self_supervised_pos=20, negatives=20, manual_slots=2)
        assert generate_pair_manifest(catalog, truth, counts, seed=5) == \
               generate_pair_manifest(catalog, truth, counts, seed=5)


class TestTruthDocument:
    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(rooms_per_type={"bedroom": 2, "bathroom": 1}, seed=51)
        _, truth = generate_property(cfg)
        path = tmp_path / "truth.json"
        write_truth(truth, path)
        assert load_truth(path) == truth

    def test_document_shape(self):
        cfg = SynthConfig(rooms_per_type={"bedroom": 1}, seed=52)
        _, truth = generate_property(cfg)
        doc = truth_to_document(truth)
        assert truth_from_document(json.loads(json.dumps(doc))) == truth
