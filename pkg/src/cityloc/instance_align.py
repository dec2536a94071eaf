"""Instance-level spatial alignment.

The pairwise offset graph grounds each submap's geometry; edge features
fuse endpoint semantics with the offset. A Bezier edge encoder then
re-expresses each edge along a quadratic curve and tanh-bounds it, so
metric magnitude cannot dominate the embedding while direction survives.
Gaussian aggregation compresses the bounded edges into per-instance
descriptors, and bidirectional set-to-set contrastive losses align the
two modalities.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractViolation
from .nn import Linear, LSTMCell, MLP, ParameterStore
from .scenes import SceneSubmap
from .tensor import Tensor, concat, stack


def build_offset_tensor(submap: SceneSubmap) -> np.ndarray:
    """Pairwise centroid offsets O[m, n] = centroid(m) - centroid(n)."""
    if len(submap.instances) < 2:
        raise ContractViolation("offset graph needs at least 2 instances")
    c = np.array([o.centroid for o in submap.instances], dtype=np.float64)
    return c[:, None, :] - c[None, :, :]


class EdgeFuser:
    """Directed edge features from endpoint features and (optionally) offsets.

    Point-cloud edges concatenate [v_m ; v_n ; geo(O_mn)]; textual edges
    have no geometric branch and use [t_m ; t_n] only.
    """

    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 edge_dim: int, geo_dim: int | None = None):
        self.geo = None
        in_dim = 2 * feat_dim
        if geo_dim is not None:
            self.geo = Linear(store, f"{name}.geo", 3, geo_dim)
            in_dim += geo_dim
        self.fuse = MLP(store, f"{name}.fuse", in_dim, edge_dim, edge_dim)
        self.edge_dim = edge_dim

    def pair_input(self, feats: Tensor, offsets=None) -> Tensor:
        """The (N^2, in_dim) stacked inputs, one row per directed pair."""
        if feats.shape[0] < 2:
            raise ContractViolation("edge fusion needs at least 2 feature rows")
        n = feats.shape[0]
        idx_m = np.repeat(np.arange(n), n)
        idx_n = np.tile(np.arange(n), n)
        parts = [feats[idx_m], feats[idx_n]]
        if self.geo is not None:
            if offsets is None:
                raise ContractViolation("this fuser requires an offset tensor")
            o = offsets if isinstance(offsets, Tensor) else Tensor(offsets)
            parts.append(self.geo(o.reshape((n * n, 3))).tanh())
        return concat(parts, axis=1)

    def apply(self, pair_rows: Tensor) -> Tensor:
        """Fuse stacked pair rows; batching rows across submaps is fine."""
        return self.fuse(pair_rows)

    def __call__(self, feats: Tensor, offsets=None) -> Tensor:
        n = feats.shape[0]
        edges = self.apply(self.pair_input(feats, offsets))
        return edges.reshape((n, n, self.edge_dim))


def bezier_point(p0: Tensor, p1: Tensor, p2: Tensor, tau) -> Tensor:
    """Quadratic Bezier evaluation (1-t)^2 P0 + 2(1-t)t P1 + t^2 P2."""
    one_minus = 1.0 - tau
    return (one_minus * one_minus) * p0 + 2.0 * (one_minus * tau) * p1 \
        + (tau * tau) * p2


class BezierEdgeEncoder:
    """Iterated Bezier modulation of edge features with tanh bounding.

    Each pass summarizes an edge with one recurrent step from a zero
    state (an edge carries no sequence, and any ordering would break
    permutation symmetry), predicts the three control points, evaluates
    the curve at a learnable tau in [0, 1], and squashes with tanh. The
    recurrent/projection parameters are shared across passes; tau is a
    separate learnable scalar per pass.
    """

    def __init__(self, store: ParameterStore, name: str, edge_dim: int,
                 iterations: int = 2):
        if iterations < 1:
            raise ConfigError("bezier encoder needs at least 1 iteration")
        self.iterations = iterations
        self.cell = LSTMCell(store, f"{name}.cell", edge_dim, edge_dim)
        self.p0_head = Linear(store, f"{name}.p0", edge_dim, edge_dim)
        self.p2_head = Linear(store, f"{name}.p2", edge_dim, edge_dim)
        self.p1_head = Linear(store, f"{name}.p1", edge_dim, edge_dim)
        self.tau_raw = store.param(f"{name}.tau_raw", (iterations,), init="zeros")

    def controls(self, edges_flat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h, _ = self.cell.step(edges_flat)
        p0 = self.p0_head(h)
        p2 = self.p2_head(h)
        p1 = self.p1_head(p0)  # intermediate control derives from the start point
        return p0, p1, p2

    def refine_flat(self, x: Tensor) -> Tensor:
        """Run the iterated modulation on flat (M, edge_dim) rows."""
        for it in range(self.iterations):
            p0, p1, p2 = self.controls(x)
            tau = self.tau_raw[it].sigmoid()
            x = bezier_point(p0, p1, p2, tau).tanh()
        return x

    def __call__(self, edges: Tensor) -> Tensor:
        n = edges.shape[0]
        flat = edges.reshape((n * n, edges.shape[2]))
        return self.refine_flat(flat).reshape(edges.shape)


class GaussianAggregator:
    """Edge-to-instance compression through a reparameterized latent.

    Per edge, heads predict mu and log-variance; Z = mu + sigma * eps
    with externally supplied noise (None freezes Z = mu exactly). The
    channelwise softmax is normalized across the subject axis and summed
    over partners, yielding one descriptor per instance. (Normalizing
    across the partner axis and then summing over it would make every
    descriptor a constant all-twos vector, carrying no signal.)
    """

    def __init__(self, store: ParameterStore, name: str, edge_dim: int):
        self.mu_head = Linear(store, f"{name}.mu", edge_dim, edge_dim)
        self.logvar_head = Linear(store, f"{name}.logvar", edge_dim, edge_dim)
        self.edge_dim = edge_dim

    def latent(self, edges: Tensor, noise: np.ndarray | None) -> Tensor:
        n = edges.shape[0]
        flat = edges.reshape((n * n, self.edge_dim))
        mu = self.mu_head(flat)
        if noise is None:
            return mu.reshape(edges.shape)
        logvar = self.logvar_head(flat)
        eps = Tensor(np.asarray(noise, dtype=np.float64).reshape(n * n,
                                                                 self.edge_dim))
        z = mu + (logvar * 0.5).exp() * eps
        return z.reshape(edges.shape)

    def __call__(self, edges: Tensor, noise: np.ndarray | None = None) -> Tensor:
        z = self.latent(edges, noise)
        agg = z.softmax(axis=0) + edges.softmax(axis=0)
        return agg.sum(axis=1)


def maxpool_aggregate(edges: Tensor) -> Tensor:
    """Ablation stand-in: channelwise max over the partner axis."""
    return edges.max(axis=1)


# -- set-to-set similarity and contrastive losses ---------------------------


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x * ((x * x).sum(axis=1, keepdims=True) + eps) ** -0.5


def _block_offsets(sets: list[Tensor]) -> np.ndarray:
    return np.cumsum([0] + [t.shape[0] for t in sets])


def _block_mean_matrix(sets: list[Tensor]) -> np.ndarray:
    """Constant (B, total_rows) matrix averaging each set's row block."""
    off = _block_offsets(sets)
    m = np.zeros((len(sets), off[-1]))
    for i, t in enumerate(sets):
        m[i, off[i]:off[i + 1]] = 1.0 / t.shape[0]
    return m


def pairwise_set_scores(xs: list[Tensor], ys: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Bidirectional chamfer-style similarity matrices for a batch of sets.

    Returns (x2y, y2x), both (B, B): x2y[i, j] is the mean over rows of
    X_i of the best cosine match among rows of Y_j, and symmetrically.
    All pairwise cosines come from one stacked matmul; per-set block
    maxima and means are then read off along its slices.
    """
    if len(xs) != len(ys) or not xs:
        raise ContractViolation("similarity needs equal-length non-empty batches")
    for t in (*xs, *ys):
        if t.shape[0] == 0:
            raise ContractViolation("empty descriptor set")
    b = len(xs)
    xn = normalize_rows(concat(xs, axis=0))
    yn = normalize_rows(concat(ys, axis=0))
    cos = xn @ yn.T  # (total_x_rows, total_y_rows)
    xoff = _block_offsets(xs)
    yoff = _block_offsets(ys)
    # best match per x row within each Y_j block, then mean per X_i block
    best_y = stack([cos[:, yoff[j]:yoff[j + 1]].max(axis=1) for j in range(b)],
                   axis=1)
    x2y = Tensor(_block_mean_matrix(xs)) @ best_y
    # best match per y row within each X_j block, then mean per Y_i block
    best_x = stack([cos[xoff[j]:xoff[j + 1], :].max(axis=0) for j in range(b)],
                   axis=1)
    y2x = Tensor(_block_mean_matrix(ys)) @ best_x
    return x2y, y2x


def set_similarity(xs: list[Tensor], ys: list[Tensor], gamma: float) -> Tensor:
    """Per-item similarity: sum of both directions' matched softmax mass."""
    if gamma <= 0:
        raise ConfigError("temperature gamma must be positive")
    x2y, y2x = pairwise_set_scores(xs, ys)
    b = len(xs)
    diag = (np.arange(b), np.arange(b))
    return (x2y * (1.0 / gamma)).softmax(axis=1)[diag] \
        + (y2x * (1.0 / gamma)).softmax(axis=1)[diag]


def _contrastive(x2y: Tensor, y2x: Tensor, gamma: float, mode: str) -> Tensor:
    b = x2y.shape[0]
    diag = (np.arange(b), np.arange(b))
    if mode == "corrected":
        logp_x = (x2y * (1.0 / gamma)).log_softmax(axis=1)[diag]
        logp_y = (y2x * (1.0 / gamma)).log_softmax(axis=1)[diag]
        return -(logp_x + logp_y).mean()
    if mode == "literal":
        s = (x2y * (1.0 / gamma)).softmax(axis=1)[diag] \
            + (y2x * (1.0 / gamma)).softmax(axis=1)[diag]
        return -((1.0 - s).clamp_min(1e-6).log()).mean()
    raise ConfigError(f"unknown alignment-loss mode {mode!r}")


def alignment_loss(xs: list[Tensor], ys: list[Tensor], gamma: float,
                   mode: str = "corrected") -> Tensor:
    """Bidirectional contrastive loss over a batch of matched sets.

    ``corrected`` is the trainable default: the negative log softmax
    mass on the matched pair in both directions. ``literal`` keeps the
    -log(1 - S) form with its argument clamped to 1e-6; with S summing
    two softmax masses it can reach 2, so the clamp is what keeps the
    loss finite (and is why literal mode is not the default).
    """
    if gamma <= 0:
        raise ConfigError("temperature gamma must be positive")
    x2y, y2x = pairwise_set_scores(xs, ys)
    return _contrastive(x2y, y2x, gamma, mode)


def alignment_loss_vectors(x: Tensor, y: Tensor, gamma: float,
                           mode: str = "corrected") -> Tensor:
    """Contrastive loss for one descriptor vector per item (B, D)."""
    if gamma <= 0:
        raise ConfigError("temperature gamma must be positive")
    if x.shape != y.shape or x.ndim != 2:
        raise ContractViolation(f"expected matching (B, D), got {x.shape}/{y.shape}")
    c = normalize_rows(x) @ normalize_rows(y).T
    return _contrastive(c, c.T, gamma, mode)


class InstanceAlignmentHead:
    """The two instance-level losses: spatial descriptors and raw projections."""

    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 proj_dim: int):
        self.proj_point = Linear(store, f"{name}.proj_point", feat_dim, proj_dim)
        self.proj_text = Linear(store, f"{name}.proj_text", feat_dim, proj_dim)

    def spatial_loss(self, point_desc: list[Tensor], text_desc: list[Tensor],
                     gamma: float, mode: str = "corrected") -> Tensor:
        return alignment_loss(point_desc, text_desc, gamma, mode)

    def object_loss(self, point_feats: list[Tensor], text_feats: list[Tensor],
                    gamma: float, mode: str = "corrected") -> Tensor:
        v = [self.proj_point(f) for f in point_feats]
        t = [self.proj_text(f) for f in text_feats]
        return alignment_loss(v, t, gamma, mode)
