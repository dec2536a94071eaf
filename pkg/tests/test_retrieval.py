"""Gallery search correctness and recall metrics."""

import numpy as np
import pytest

from cityloc.errors import ContractViolation, DataError
from cityloc.retrieval import (
    Gallery,
    RetrievalResult,
    load_descriptors,
    load_retrieval_results,
    recall_at_k,
    retrieve,
    save_descriptors,
    save_retrieval_results,
)


def _gallery():
    return Gallery.build([(1, np.array([0.0, 0.0])),
                          (2, np.array([3.0, 4.0])),
                          (3, np.array([1.0, 0.0]))])


class TestRetrieve:
    def test_exact_match_ranks_first(self):
        r = retrieve(np.array([3.0, 4.0]), _gallery(), k=1)
        assert r.submap_ids == [2]
        assert r.distances == [0.0]

    def test_k_equals_gallery_returns_all_sorted(self):
        r = retrieve(np.array([0.0, 0.0]), _gallery(), k=3)
        assert r.submap_ids == [1, 3, 2]
        assert r.distances == sorted(r.distances)

    def test_hand_computed_distances(self):
        r = retrieve(np.array([0.0, 0.0]), _gallery(), k=2)
        assert r.submap_ids == [1, 3]
        np.testing.assert_allclose(r.distances, [0.0, 1.0])

    def test_ties_break_by_ascending_id(self):
        g = Gallery.build([(7, np.array([1.0, 0.0])),
                           (2, np.array([0.0, 1.0])),
                           (5, np.array([-1.0, 0.0]))])
        r = retrieve(np.array([0.0, 0.0]), g, k=3)
        assert r.submap_ids == [2, 5, 7]

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            retrieve(np.array([1.0, 2.0, 3.0]), _gallery(), k=1)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(0)
        ids = list(rng.permutation(40))
        vectors = rng.normal(size=(40, 8))
        g = Gallery.build([(int(i), v) for i, v in zip(ids, vectors)])
        for _ in range(25):
            q = rng.normal(size=8)
            r = retrieve(q, g, k=5)
            scan = sorted(
                ((float(np.linalg.norm(v - q)), int(i))
                 for i, v in zip(ids, vectors)),
            )[:5]
            assert r.submap_ids == [i for _, i in scan]
            np.testing.assert_allclose(r.distances, [d for d, _ in scan])


class TestRecall:
    def test_perfect_retrieval(self):
        results = [RetrievalResult(q, [q + 100], [0.0]) for q in range(10)]
        gt = {q: q + 100 for q in range(10)}
        assert recall_at_k(results, gt, ks=(1,)) == {1: 1.0}

    def test_monotone_in_k(self):
        rng = np.random.default_rng(1)
        results = []
        gt = {}
        for q in range(50):
            ranked = list(rng.permutation(20))
            results.append(RetrievalResult(q, ranked, list(range(20))))
            gt[q] = int(rng.integers(20))
        r = recall_at_k(results, gt, ks=(1, 3, 5, 10, 20))
        values = [r[k] for k in (1, 3, 5, 10, 20)]
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert r[20] == 1.0

    def test_missing_ground_truth_rejected(self):
        results = [RetrievalResult(0, [1], [0.0])]
        with pytest.raises(DataError):
            recall_at_k(results, {}, ks=(1,))


class TestDumps:
    def test_descriptor_roundtrip(self, tmp_path):
        entries = [{"id": 3, "modality": "point", "vector": [0.5, -1.0]},
                   {"id": 9, "modality": "text", "vector": [1.0, 2.0]}]
        save_descriptors(tmp_path / "d.json", entries)
        assert load_descriptors(tmp_path / "d.json") == entries

    def test_malformed_descriptor_rejected(self, tmp_path):
        (tmp_path / "d.json").write_text('[{"id": 1}]')
        with pytest.raises(DataError):
            load_descriptors(tmp_path / "d.json")

    def test_retrieval_results_roundtrip(self, tmp_path):
        results = [RetrievalResult(4, [1, 2], [0.1, 0.4])]
        save_retrieval_results(tmp_path / "r.jsonl", results)
        loaded = load_retrieval_results(tmp_path / "r.jsonl")
        assert loaded == results
