"""End-to-end model wiring for both stages.

``CoarseModel`` owns every coarse-stage parameter: the two frontends,
the instance-level edge machinery, and the global encoders. The global
encoders are always constructed (evaluation retrieves with their
descriptors regardless of which losses train), while the instance path
and the raw-feature projections exist only when their losses are
enabled. ``FineModel`` is the separately trained localizer with its own
frontends, optionally warm-started from a coarse checkpoint.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .encoders import ObjectEncoder, TextEncoder, default_vocabulary
from .fine import CrossModalFuser, LocalizationHead, LocalizationPrediction, \
    uncertainty_loss
from .global_align import (
    FrequencyEncoder,
    SequenceEncoder,
    TextGlobalEncoder,
    canonical_instance_order,
    global_alignment_loss,
)
from .instance_align import (
    BezierEdgeEncoder,
    EdgeFuser,
    GaussianAggregator,
    InstanceAlignmentHead,
    alignment_loss,
    build_offset_tensor,
    maxpool_aggregate,
)
from .nn import ParameterStore, frozen
from .scenes import Query, SceneSubmap
from .tensor import Tensor, concat, stack


class CoarseModel:
    def __init__(self, config: RunConfig, seed: int | None = None):
        config.validate()
        self.config = config
        self.store = ParameterStore(config.seed if seed is None else seed)
        self.vocab = default_vocabulary()

        self.text_encoder = TextEncoder(self.store, "text", self.vocab,
                                        config.feat_dim)
        self.object_encoder = ObjectEncoder(self.store, "objects",
                                            config.feat_dim)

        self.point_fuser = None
        self.text_fuser = None
        self.bezier = None
        self.point_agg = None
        self.text_agg = None
        if config.loss_spatial:
            self.point_fuser = EdgeFuser(self.store, "edges.point",
                                         config.feat_dim, config.edge_dim,
                                         geo_dim=config.geo_dim)
            self.text_fuser = EdgeFuser(self.store, "edges.text",
                                        config.feat_dim, config.edge_dim)
            if config.use_bezier:
                self.bezier = BezierEdgeEncoder(self.store, "bezier",
                                                config.edge_dim,
                                                config.bezier_iterations)
            if config.aggregation == "gaussian":
                self.point_agg = GaussianAggregator(self.store, "agg.point",
                                                    config.edge_dim)
                self.text_agg = GaussianAggregator(self.store, "agg.text",
                                                   config.edge_dim)

        self.align_head = None
        if config.loss_object:
            self.align_head = InstanceAlignmentHead(self.store, "proj",
                                                    config.feat_dim,
                                                    config.proj_dim)

        if config.use_frequency:
            self.point_global = FrequencyEncoder(
                self.store, "global.point", config.feat_dim, config.branch_dim,
                config.global_dim, config.seq_len)
        else:
            self.point_global = SequenceEncoder(
                self.store, "global.point", config.feat_dim, config.branch_dim,
                config.global_dim, config.seq_len)
        self.text_global = TextGlobalEncoder(self.store, "global.text",
                                             config.feat_dim, config.global_dim)

    # -- feature paths ---------------------------------------------------

    def _ordered_object_features(self, submap: SceneSubmap):
        enc = self.object_encoder.encode(submap)
        order = canonical_instance_order(enc.centroids, submap.center)
        return enc, enc.features[order]

    def _spatial_descriptors(self, submap, enc, text_feats, noise_rng):
        offsets = build_offset_tensor(submap)
        edges = self.point_fuser(enc.features, offsets)
        if self.bezier is not None:
            edges = self.bezier(edges)
        text_edges = self.text_fuser(text_feats)
        if self.config.aggregation == "gaussian":
            p_noise = t_noise = None
            if noise_rng is not None:
                p_noise = noise_rng.standard_normal(edges.shape)
                t_noise = noise_rng.standard_normal(text_edges.shape)
            point_desc = self.point_agg(edges, p_noise)
            text_desc = self.text_agg(text_edges, t_noise)
        else:
            point_desc = maxpool_aggregate(edges)
            text_desc = maxpool_aggregate(text_edges)
        return point_desc, text_desc

    def _spatial_descriptors_batch(self, pairs, objects, texts, noise_rng):
        """Edge fusion and refinement run once over all pairs' stacked rows;
        aggregation stays per pair (its softmax normalizes within a submap)."""
        cfg = self.config
        p_rows = [self.point_fuser.pair_input(
            enc.features, Tensor(build_offset_tensor(submap)))
            for (submap, _), enc in zip(pairs, objects)]
        t_rows = [self.text_fuser.pair_input(t.features) for t in texts]
        p_flat = self.point_fuser.apply(concat(p_rows, axis=0))
        if self.bezier is not None:
            p_flat = self.bezier.refine_flat(p_flat)
        t_flat = self.text_fuser.apply(concat(t_rows, axis=0))

        point_desc, text_desc = [], []
        p_off = t_off = 0
        for rows_p, rows_t in zip(p_rows, t_rows):
            n = int(np.sqrt(rows_p.shape[0]))
            q = int(np.sqrt(rows_t.shape[0]))
            edges = p_flat[p_off:p_off + n * n].reshape((n, n, cfg.edge_dim))
            tedges = t_flat[t_off:t_off + q * q].reshape((q, q, cfg.edge_dim))
            p_off += n * n
            t_off += q * q
            if cfg.aggregation == "gaussian":
                p_noise = t_noise = None
                if noise_rng is not None:
                    p_noise = noise_rng.standard_normal(edges.shape)
                    t_noise = noise_rng.standard_normal(tedges.shape)
                point_desc.append(self.point_agg(edges, p_noise))
                text_desc.append(self.text_agg(tedges, t_noise))
            else:
                point_desc.append(maxpool_aggregate(edges))
                text_desc.append(maxpool_aggregate(tedges))
        return point_desc, text_desc

    # -- training loss ---------------------------------------------------

    def batch_loss(self, pairs: list[tuple[SceneSubmap, Query]],
                   noise_rng: np.random.Generator | None):
        """Total coarse loss over a batch of matched (submap, query) pairs.

        Disabled terms are exactly zero and contribute no gradient.
        Returns (loss, per-term values).
        """
        cfg = self.config
        texts = []
        objects = []
        ordered = []
        for submap, query in pairs:
            texts.append(self.text_encoder.encode(query.descriptions, query.id))
            enc, ordered_feats = self._ordered_object_features(submap)
            objects.append(enc)
            ordered.append(ordered_feats)

        terms: dict[str, float] = {}
        total = Tensor(0.0)
        if cfg.loss_spatial:
            point_desc, text_desc = self._spatial_descriptors_batch(
                pairs, objects, texts, noise_rng)
            l_spatial = alignment_loss(point_desc, text_desc, cfg.gamma,
                                       cfg.align_mode)
            terms["loss_spatial"] = float(l_spatial.data)
            total = total + l_spatial
        if cfg.loss_object:
            l_object = self.align_head.object_loss(
                [o.features for o in objects], [t.features for t in texts],
                cfg.gamma, cfg.align_mode)
            terms["loss_object"] = float(l_object.data)
            total = total + l_object
        if cfg.loss_global:
            point_glo = self.point_global.encode_batch(ordered)
            text_glo = stack([self.text_global(t.features) for t in texts],
                             axis=0)
            l_global = global_alignment_loss(text_glo, point_glo, cfg.gamma,
                                             cfg.align_mode)
            terms["loss_global"] = float(l_global.data)
            total = total + l_global
        terms["loss"] = float(total.data)
        return total, terms

    # -- inference -------------------------------------------------------

    def point_descriptor(self, submap: SceneSubmap) -> np.ndarray:
        with frozen(self.store):
            _, ordered_feats = self._ordered_object_features(submap)
            return self.point_global(ordered_feats).data.copy()

    def text_descriptor(self, query: Query) -> np.ndarray:
        with frozen(self.store):
            feats = self.text_encoder.encode(query.descriptions, query.id)
            return self.text_global(feats.features).data.copy()


class FineModel:
    def __init__(self, config: RunConfig, seed: int | None = None):
        config.validate()
        self.config = config
        self.store = ParameterStore(config.seed if seed is None else seed)
        self.vocab = default_vocabulary()
        self.text_encoder = TextEncoder(self.store, "text", self.vocab,
                                        config.feat_dim)
        self.object_encoder = ObjectEncoder(self.store, "objects",
                                            config.feat_dim)
        self.fuser = CrossModalFuser(self.store, "fusion", config.feat_dim,
                                     config.fuse_dim)
        self.head = LocalizationHead(self.store, "head", config.fuse_dim,
                                     config.head_hidden)

    def warm_start_from(self, coarse_state: dict[str, np.ndarray]) -> int:
        """Copy shape-compatible frontend parameters from a coarse state.

        Returns the number of parameters copied; raises nothing when the
        checkpoint lacks frontend entries (the fine stage then trains
        from its own initialization).
        """
        copied = 0
        for name, p in self.store.items():
            if not (name.startswith("text.") or name.startswith("objects.")):
                continue
            if name in coarse_state and coarse_state[name].shape == p.data.shape:
                p.data = coarse_state[name].copy()
                copied += 1
        return copied

    def _fused(self, submap: SceneSubmap, query: Query):
        text = self.text_encoder.encode(query.descriptions, query.id)
        objs = self.object_encoder.encode(submap)
        return self.fuser(text.features, objs.features)

    def loss(self, submap: SceneSubmap, query: Query) -> Tensor:
        fused = self._fused(submap, query)
        position, lam = self.head(fused, submap.center,
                                  lambda_head=self.config.lambda_head)
        return uncertainty_loss(position, lam, query.gt_position)

    def predict(self, submap: SceneSubmap, query: Query) -> LocalizationPrediction:
        with frozen(self.store):
            fused = self._fused(submap, query)
            position, lam = self.head(fused, submap.center,
                                      lambda_head=self.config.lambda_head)
            return LocalizationPrediction(
                query_id=query.id, submap_id=submap.id,
                position=(float(position.data[0]), float(position.data[1])),
                lam=float(lam.data),
            )
