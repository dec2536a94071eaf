"""Scene generation: relation rules, determinism, persistence."""

import itertools

import numpy as np
import pytest

from cityloc.errors import (
    ConfigError,
    CorruptCorpusError,
    DataError,
    SchemaVersionError,
)
from cityloc.scenes import (
    CLASSES,
    COLORS,
    GenerationConfig,
    ObjectInstance,
    corpus_checksum,
    generate_city,
    generate_splits,
    load_corpus,
    relation_truth,
    render_sentence,
    save_corpus,
)


def _obj(x, y, z=0.0, klass="building", color="gray", oid=0):
    return ObjectInstance(oid, klass, color, (x, y, z))


class TestRelationRules:
    def test_pose_south_of_instance(self):
        assert relation_truth((0.0, 0.0), _obj(0.0, 5.0)) == "south"

    def test_pose_on_centroid(self):
        assert relation_truth((2.0, 3.0), _obj(2.0, 3.0, z=4.0)) == "on-top-of"

    def test_dominant_axis_rule(self):
        # offsets (3, 4): |dy| > |dx| and pose is above -> north
        assert relation_truth((3.0, 4.0), _obj(0.0, 0.0)) == "north"

    def test_east_west(self):
        assert relation_truth((5.0, 0.5), _obj(0.0, 0.0)) == "east"
        assert relation_truth((-5.0, 0.5), _obj(0.0, 0.0)) == "west"

    def test_near_band(self):
        # both axis offsets below the dead-zone but planar distance >= 1 m
        assert relation_truth((0.8, 0.8), _obj(0.0, 0.0)) == "near"

    def test_total_and_deterministic(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            pose = tuple(rng.uniform(-40, 40, 2))
            inst = _obj(*rng.uniform(-40, 40, 2))
            first = relation_truth(pose, inst)
            assert first in {"north", "south", "east", "west", "on-top-of", "near"}
            assert relation_truth(pose, inst) == first

    def test_axis_tie_prefers_north_south(self):
        assert relation_truth((2.0, 2.0), _obj(0.0, 0.0)) == "north"


class TestSentences:
    def test_paper_style_sentence(self):
        inst = _obj(10.0, 0.0, klass="building", color="gray")
        assert (render_sentence(relation_truth((10.0, -8.0), inst), inst)
                == "The pose is south of a gray building")

    def test_on_top_of_phrase(self):
        inst = _obj(1.0, 1.0, klass="wall", color="dark-green")
        assert (render_sentence(relation_truth((1.0, 1.0), inst), inst)
                == "The pose is on top of a dark green wall")


SMALL = GenerationConfig(n_submaps=8, n_queries=40)


class TestGeneration:
    def test_deterministic_output(self):
        a = generate_city(123, SMALL)
        b = generate_city(123, SMALL)
        assert a == b

    def test_different_seed_differs(self):
        assert generate_city(1, SMALL) != generate_city(2, SMALL)

    def test_instances_within_extent(self):
        submaps, _ = generate_city(5, SMALL)
        for s in submaps:
            for o in s.instances:
                assert abs(o.centroid[0] - s.center[0]) <= s.extent
                assert abs(o.centroid[1] - s.center[1]) <= s.extent

    def test_queries_are_true_and_nearest(self):
        submaps, queries = generate_city(7, SMALL)
        by_id = {s.id: s for s in submaps}
        centers = np.array([s.center for s in submaps])
        ids = [s.id for s in submaps]
        for q in queries:
            home = by_id[q.gt_submap_id]
            # pose inside the submap square
            assert abs(q.gt_position[0] - home.center[0]) <= home.extent
            assert abs(q.gt_position[1] - home.center[1]) <= home.extent
            # nearest center is the ground-truth submap
            d = np.hypot(centers[:, 0] - q.gt_position[0],
                         centers[:, 1] - q.gt_position[1])
            assert ids[int(np.argmin(d))] == q.gt_submap_id
            # each sentence re-validates against some object of the submap
            for sentence in q.descriptions:
                assert any(
                    sentence == render_sentence(relation_truth(q.gt_position, o), o)
                    for o in home.instances
                )

    def test_object_recurrence_across_submaps(self):
        submaps, _ = generate_city(3, GenerationConfig())
        signatures = [{(o.klass, o.color) for o in s.instances} for s in submaps]
        shared = sum(
            1 for a, b in itertools.combinations(signatures, 2) if a & b
        )
        total = len(signatures) * (len(signatures) - 1) // 2
        assert shared / total >= 0.30

    def test_closed_vocabularies(self):
        submaps, _ = generate_city(11, SMALL)
        for s in submaps:
            for o in s.instances:
                assert o.klass in CLASSES and o.color in COLORS

    def test_infeasible_config_rejected(self):
        with pytest.raises(ConfigError):
            generate_city(0, GenerationConfig(ns_min=1, ns_max=1))
        with pytest.raises(ConfigError):
            generate_city(0, GenerationConfig(spacing_factor=1.5))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        submaps, queries = generate_city(9, SMALL)
        save_corpus(tmp_path / "c", submaps, queries, seed=9, split="train",
                    params=SMALL.to_dict())
        corpus = load_corpus(tmp_path / "c")
        assert corpus.submaps == submaps
        assert corpus.queries == queries
        assert corpus.manifest.split == "train"

    def test_byte_identical_regeneration(self, tmp_path):
        for d in ("a", "b"):
            submaps, queries = generate_city(9, SMALL)
            save_corpus(tmp_path / d, submaps, queries, seed=9, split="train",
                        params=SMALL.to_dict())
        for name in ("submaps.jsonl", "queries.jsonl", "manifest.json"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())

    def test_truncated_file_detected(self, tmp_path):
        submaps, queries = generate_city(9, SMALL)
        save_corpus(tmp_path / "c", submaps, queries, seed=9, split="train",
                    params=SMALL.to_dict())
        f = tmp_path / "c" / "queries.jsonl"
        f.write_text(f.read_text()[:-40])
        with pytest.raises(CorruptCorpusError):
            load_corpus(tmp_path / "c")

    def test_unknown_schema_version(self, tmp_path):
        submaps, queries = generate_city(9, SMALL)
        save_corpus(tmp_path / "c", submaps, queries, seed=9, split="train",
                    params=SMALL.to_dict())
        manifest = tmp_path / "c" / "manifest.json"
        manifest.write_text(manifest.read_text().replace(
            '"schema_version": 1', '"schema_version": 99'))
        with pytest.raises(SchemaVersionError):
            load_corpus(tmp_path / "c")

    def test_empty_corpus_rejected(self, tmp_path):
        with pytest.raises(DataError):
            save_corpus(tmp_path / "c", [], [], seed=0, split="train", params={})

    def test_checksum_depends_on_content(self):
        assert corpus_checksum("a", "b") != corpus_checksum("a", "c")


class TestSplits:
    def test_split_ids_disjoint(self, tmp_path):
        generate_splits(21, GenerationConfig(n_submaps=5, n_queries=10), tmp_path)
        seen: set[int] = set()
        for split in ("train", "val", "test"):
            corpus = load_corpus(tmp_path / split)
            ids = {s.id for s in corpus.submaps}
            assert not (ids & seen)
            seen |= ids

    def test_splits_deterministic(self, tmp_path):
        m1 = generate_splits(4, GenerationConfig(n_submaps=4, n_queries=8),
                             tmp_path / "x")
        m2 = generate_splits(4, GenerationConfig(n_submaps=4, n_queries=8),
                             tmp_path / "y")
        assert {k: v.checksum for k, v in m1.items()} == \
               {k: v.checksum for k, v in m2.items()}
