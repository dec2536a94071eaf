"""Offset graph, Bezier edge encoder, Gaussian aggregation, contrastive losses."""

import numpy as np
import pytest

from cityloc.errors import ConfigError, ContractViolation
from cityloc.instance_align import (
    BezierEdgeEncoder,
    EdgeFuser,
    GaussianAggregator,
    InstanceAlignmentHead,
    alignment_loss,
    alignment_loss_vectors,
    bezier_point,
    build_offset_tensor,
    maxpool_aggregate,
    pairwise_set_scores,
    set_similarity,
)
from cityloc.nn import ParameterStore
from cityloc.scenes import ObjectInstance, SceneSubmap
from cityloc.tensor import Tensor


def _submap(points):
    instances = tuple(
        ObjectInstance(i, "pole", "gray", tuple(p)) for i, p in enumerate(points)
    )
    return SceneSubmap(0, instances, (0.0, 0.0), 30.0)


class TestOffsetTensor:
    def test_definition(self):
        O = build_offset_tensor(_submap([(0, 0, 0), (3, 4, 0)]))
        np.testing.assert_array_equal(O[1, 0], [3, 4, 0])
        np.testing.assert_array_equal(O[0, 1], [-3, -4, 0])

    def test_zero_diagonal(self):
        O = build_offset_tensor(_submap([(1, 2, 3), (4, 5, 6), (7, 8, 9)]))
        for m in range(3):
            np.testing.assert_array_equal(O[m, m], [0, 0, 0])

    def test_antisymmetry_exhaustive(self):
        rng = np.random.default_rng(0)
        O = build_offset_tensor(_submap(rng.uniform(-20, 20, (5, 3))))
        for m in range(5):
            for n in range(5):
                np.testing.assert_array_equal(O[m, n], -O[n, m])

    def test_single_instance_rejected(self):
        with pytest.raises(ContractViolation):
            build_offset_tensor(_submap([(0, 0, 0)]))


class TestEdgeFuser:
    def _fuser(self, seed=0, geo=True):
        store = ParameterStore(seed=seed)
        return store, EdgeFuser(store, "edges", feat_dim=6, edge_dim=5,
                                geo_dim=4 if geo else None)

    def test_zero_final_layer_collapses_to_bias(self):
        store, fuser = self._fuser()
        fuser.fuse.lin2.w.data[...] = 0.0
        fuser.fuse.lin2.b.data[...] = np.arange(5, dtype=float)
        feats = Tensor(np.random.default_rng(1).normal(size=(3, 6)))
        O = np.random.default_rng(2).normal(size=(3, 3, 3))
        edges = fuser(feats, O)
        for m in range(3):
            for n in range(3):
                np.testing.assert_array_equal(edges.data[m, n], np.arange(5))

    def test_directed_edges_differ(self):
        store, fuser = self._fuser()
        feats = Tensor(np.random.default_rng(3).normal(size=(3, 6)))
        O = build_offset_tensor(_submap([(0, 0, 0), (5, 0, 0), (0, 5, 0)]))
        edges = fuser(feats, O)
        assert not np.allclose(edges.data[0, 1], edges.data[1, 0])

    def test_textual_variant_has_no_geometry(self):
        store = ParameterStore(seed=4)
        fuser = EdgeFuser(store, "tedges", feat_dim=6, edge_dim=5)
        feats = Tensor(np.random.default_rng(4).normal(size=(4, 6)))
        edges = fuser(feats)
        assert edges.shape == (4, 4, 5)

    def test_gradient_wrt_offsets_matches_finite_differences(self):
        store, fuser = self._fuser(seed=7)
        rng = np.random.default_rng(5)
        feats = Tensor(rng.normal(size=(3, 6)))
        O0 = rng.normal(size=(3, 3, 3))
        w = rng.normal(size=(3, 3, 5))

        def scalar(arr):
            return float((fuser(feats, Tensor(arr)) * Tensor(w)).sum().data)

        O = Tensor(O0, requires_grad=True)
        (fuser(feats, O) * Tensor(w)).sum().backward()
        step = 1e-6
        for idx in [(0, 1, 0), (2, 0, 2), (1, 1, 1)]:
            bumped = O0.copy()
            bumped[idx] += step
            up = scalar(bumped)
            bumped[idx] -= 2 * step
            down = scalar(bumped)
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(O.grad[idx]), 1e-3)
            assert abs(O.grad[idx] - numeric) / denom <= 1e-5


class TestBezierEncoder:
    def test_endpoint_identities(self):
        rng = np.random.default_rng(6)
        p0 = Tensor(rng.normal(size=(4, 5)))
        p1 = Tensor(rng.normal(size=(4, 5)))
        p2 = Tensor(rng.normal(size=(4, 5)))
        np.testing.assert_allclose(bezier_point(p0, p1, p2, 0.0).data, p0.data,
                                   atol=1e-12)
        np.testing.assert_allclose(bezier_point(p0, p1, p2, 1.0).data, p2.data,
                                   atol=1e-12)

    def test_hand_derived_midpoint(self):
        val = bezier_point(Tensor([0.2]), Tensor([1.0]), Tensor([-0.4]), 0.5)
        np.testing.assert_allclose(val.data, [0.45], atol=1e-12)

    def test_output_strictly_bounded_under_huge_inputs(self):
        store = ParameterStore(seed=8)
        enc = BezierEdgeEncoder(store, "bez", edge_dim=6, iterations=2)
        rng = np.random.default_rng(9)
        edges = Tensor(rng.normal(size=(4, 4, 6)) * 1000.0)
        out = enc(edges).data
        assert np.all(out > -1.0) and np.all(out < 1.0)

    def test_sign_preserved_at_start_endpoint(self):
        # with tau driven to 0 the curve sits at P0 and tanh keeps its sign
        store = ParameterStore(seed=10)
        enc = BezierEdgeEncoder(store, "bez", edge_dim=6, iterations=1)
        enc.tau_raw.data[...] = -40.0  # sigmoid -> ~0
        edges = Tensor(np.random.default_rng(11).normal(size=(3, 3, 6)))
        flat = edges.reshape((9, 6))
        p0, _, _ = enc.controls(flat)
        out = enc(edges).data.reshape(9, 6)
        np.testing.assert_array_equal(np.sign(out), np.sign(p0.data))

    def test_zero_iterations_rejected(self):
        with pytest.raises(ConfigError):
            BezierEdgeEncoder(ParameterStore(seed=0), "bez", 4, iterations=0)

    def test_iterations_feed_forward(self):
        store1 = ParameterStore(seed=12)
        one = BezierEdgeEncoder(store1, "bez", edge_dim=4, iterations=1)
        store2 = ParameterStore(seed=12)
        two = BezierEdgeEncoder(store2, "bez", edge_dim=4, iterations=2)
        # same parameter draws except tau length; force identical taus
        two.tau_raw.data[...] = 0.0
        one.tau_raw.data[...] = 0.0
        edges = Tensor(np.random.default_rng(13).normal(size=(3, 3, 4)))
        first = one(edges)
        again = one(first)
        np.testing.assert_allclose(two(edges).data, again.data, atol=1e-12)


class TestGaussianAggregation:
    def _agg(self, seed=0, edge_dim=5):
        store = ParameterStore(seed=seed)
        return GaussianAggregator(store, "agg", edge_dim)

    def test_frozen_noise_equals_mu(self):
        agg = self._agg()
        edges = Tensor(np.random.default_rng(14).normal(size=(3, 3, 5)))
        z = agg.latent(edges, None)
        flat = edges.reshape((9, 5))
        mu = agg.mu_head(flat).reshape((3, 3, 5))
        np.testing.assert_array_equal(z.data, mu.data)

    def test_reparameterization_value(self):
        # mu = 1, log var = ln 4, eps = 1 -> z = 1 + 2
        agg = self._agg()
        agg.mu_head.w.data[...] = 0.0
        agg.mu_head.b.data[...] = 1.0
        agg.logvar_head.w.data[...] = 0.0
        agg.logvar_head.b.data[...] = np.log(4.0)
        edges = Tensor(np.zeros((2, 2, 5)))
        z = agg.latent(edges, np.ones((2, 2, 5)))
        np.testing.assert_allclose(z.data, 3.0, atol=1e-12)

    def test_singleton_descriptor_is_all_twos(self):
        agg = self._agg()
        edges = Tensor(np.random.default_rng(15).normal(size=(1, 1, 5)))
        out = agg(edges, None)
        np.testing.assert_allclose(out.data, np.full((1, 5), 2.0), atol=1e-12)

    def test_empirical_mean_matches_mu(self):
        agg = self._agg(seed=3)
        edges = Tensor(np.random.default_rng(16).normal(size=(2, 2, 5)))
        mu = agg.latent(edges, None).data
        flat = edges.reshape((4, 5))
        sigma = np.exp(0.5 * agg.logvar_head(flat).data).reshape(2, 2, 5)
        n = 100_000
        rng = np.random.default_rng(20260810)
        acc = np.zeros_like(mu)
        for _ in range(n):
            acc += agg.latent(edges, rng.standard_normal((2, 2, 5))).data
        mean = acc / n
        np.testing.assert_array_less(np.abs(mean - mu), 4.0 * sigma / np.sqrt(n))

    def test_deterministic_with_frozen_noise(self):
        agg = self._agg()
        edges = Tensor(np.random.default_rng(17).normal(size=(3, 3, 5)))
        np.testing.assert_array_equal(agg(edges, None).data, agg(edges, None).data)

    def test_maxpool_replacement(self):
        edges = Tensor(np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3))
        out = maxpool_aggregate(edges)
        np.testing.assert_array_equal(out.data, edges.data.max(axis=1))


class TestSetSimilarity:
    def test_singleton_batch_gives_two(self):
        rng = np.random.default_rng(18)
        xs = [Tensor(rng.normal(size=(3, 4)))]
        ys = [Tensor(rng.normal(size=(2, 4)))]
        s = set_similarity(xs, ys, gamma=0.5)
        np.testing.assert_allclose(s.data, [2.0], atol=1e-12)

    def test_two_way_softmax_value(self):
        # cross-similarity logits ((1,0),(0,1)) at gamma=1: diagonal e/(e+1)
        x2y = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        p = x2y.softmax(axis=1).data
        expected = np.e / (np.e + 1.0)
        np.testing.assert_allclose(np.diag(p), expected, atol=1e-12)

    def test_matched_pairs_dominate_at_low_temperature(self):
        rng = np.random.default_rng(19)
        base = rng.normal(size=(4, 6))
        q, _ = np.linalg.qr(base.T)
        vectors = q.T[:4]  # orthogonal rows
        xs = [Tensor(vectors[i:i + 1]) for i in range(4)]
        ys = [Tensor(vectors[i:i + 1]) for i in range(4)]
        s = set_similarity(xs, ys, gamma=0.05)
        np.testing.assert_allclose(s.data, 2.0, atol=1e-6)

    def test_invalid_gamma_rejected(self):
        xs = [Tensor(np.ones((1, 2)))]
        with pytest.raises(ConfigError):
            set_similarity(xs, xs, gamma=0.0)

    def test_empty_set_rejected(self):
        with pytest.raises(ContractViolation):
            pairwise_set_scores([Tensor(np.zeros((0, 3)))],
                                [Tensor(np.ones((2, 3)))])

    def test_directional_scores_are_chamfer_means(self):
        xs = [Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))]
        ys = [Tensor(np.array([[1.0, 0.0]]))]
        x2y, y2x = pairwise_set_scores(xs, ys)
        # X->Y: rows of X best-match the single y: cos = 1 and 0, mean 0.5
        np.testing.assert_allclose(x2y.data, [[0.5]], atol=1e-12)
        # Y->X: the single y matches x_0 perfectly
        np.testing.assert_allclose(y2x.data, [[1.0]], atol=1e-12)


class TestAlignmentLoss:
    def test_corrected_singleton_is_zero(self):
        xs = [Tensor(np.random.default_rng(20).normal(size=(2, 3)))]
        loss = alignment_loss(xs, xs, gamma=0.1, mode="corrected")
        np.testing.assert_allclose(loss.data, 0.0, atol=1e-12)

    def test_corrected_identical_batch_value(self):
        # all four embeddings identical: p_bb = 0.5 both ways -> loss 2 ln 2
        row = np.ones((1, 4))
        xs = [Tensor(row.copy()), Tensor(row.copy())]
        ys = [Tensor(row.copy()), Tensor(row.copy())]
        loss = alignment_loss(xs, ys, gamma=1.0, mode="corrected")
        np.testing.assert_allclose(loss.data, 2 * np.log(2.0), atol=1e-12)

    def test_literal_singleton_hits_clamp(self):
        xs = [Tensor(np.random.default_rng(21).normal(size=(2, 3)))]
        loss = alignment_loss(xs, xs, gamma=0.1, mode="literal")
        np.testing.assert_allclose(loss.data, -np.log(1e-6), atol=1e-9)
        assert np.isfinite(loss.data)

    def test_loss_decreases_as_diagonal_similarity_rises(self):
        def loss_with_match(cos_match):
            a = np.array([[1.0, 0.0]])
            b = np.array([[cos_match, np.sqrt(1 - cos_match**2)]])
            xs = [Tensor(a), Tensor(np.array([[0.0, 1.0]]))]
            ys = [Tensor(b), Tensor(np.array([[0.0, 1.0]]))]
            return float(alignment_loss(xs, ys, gamma=0.5).data)

        values = [loss_with_match(c) for c in (0.2, 0.5, 0.8, 0.95)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_gradient_flows_to_projections(self):
        store = ParameterStore(seed=22)
        head = InstanceAlignmentHead(store, "head", feat_dim=4, proj_dim=4)
        rng = np.random.default_rng(23)
        v = [Tensor(rng.normal(size=(3, 4))) for _ in range(2)]
        t = [Tensor(rng.normal(size=(2, 4))) for _ in range(2)]

        def scalar():
            return head.object_loss(v, t, gamma=0.5)

        store.zero_grad()
        scalar().backward()
        w = head.proj_point.w
        grad = w.grad.copy()
        assert np.any(grad != 0)
        step = 1e-6
        worst = 0.0
        for idx in [(0, 0), (1, 2), (3, 3)]:
            keep = w.data[idx]
            w.data[idx] = keep + step
            up = float(scalar().data)
            w.data[idx] = keep - step
            down = float(scalar().data)
            w.data[idx] = keep
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(grad[idx]), 1e-3)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
        assert worst <= 1e-3

    def test_both_losses_nonnegative(self):
        store = ParameterStore(seed=24)
        head = InstanceAlignmentHead(store, "head", feat_dim=4, proj_dim=4)
        rng = np.random.default_rng(25)
        v = [Tensor(rng.normal(size=(3, 4))) for _ in range(3)]
        t = [Tensor(rng.normal(size=(2, 4))) for _ in range(3)]
        assert float(head.spatial_loss(v, t, gamma=0.2).data) >= 0.0
        assert float(head.object_loss(v, t, gamma=0.2).data) >= 0.0

    def test_vector_variant_matches_set_variant_on_singletons(self):
        rng = np.random.default_rng(26)
        x = rng.normal(size=(3, 5))
        y = rng.normal(size=(3, 5))
        as_sets = alignment_loss([Tensor(x[i:i + 1]) for i in range(3)],
                                 [Tensor(y[i:i + 1]) for i in range(3)], 0.3)
        as_vectors = alignment_loss_vectors(Tensor(x), Tensor(y), 0.3)
        np.testing.assert_allclose(as_sets.data, as_vectors.data, atol=1e-12)
