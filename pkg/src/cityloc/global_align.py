"""Global-level alignment: frequency-domain submap encoding and text pooling.

The frequency encoder projects an instance-feature sequence into three
subspaces, moves each to the frequency domain, and reads off
complementary views: the real part, the imaginary part, and a high-pass
filtered reconstruction. A triple cross-attention combines them and two
stacked recurrent layers squeeze the sequence into one global
descriptor. The text side is a stack of self-attention and channelwise
max-pool blocks.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .fourier import ComplexSpectrum, apply_mask, dft, highpass_mask, idft
from .instance_align import alignment_loss_vectors
from .nn import Linear, LSTMCell, ParameterStore, SelfAttention, attention_weights
from .tensor import Tensor, concat, stack


def canonical_instance_order(centroids: np.ndarray, center) -> np.ndarray:
    """Deterministic sequence order: planar distance from the submap center,
    ties broken by position in the instance list."""
    d = np.hypot(centroids[:, 0] - center[0], centroids[:, 1] - center[1])
    return np.lexsort((np.arange(len(d)), d))


def pad_sequence(features: Tensor, seq_len: int) -> Tensor:
    """Zero-pad (or truncate) rows to exactly ``seq_len``."""
    n = features.shape[0]
    if n == seq_len:
        return features
    if n > seq_len:
        return features[:seq_len]
    pad = Tensor(np.zeros((seq_len - n, features.shape[1])))
    return concat([features, pad], axis=0)


class FrequencyEncoder:
    """Three-branch frequency-domain encoder for a padded feature sequence."""

    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 branch_dim: int, out_dim: int, seq_len: int):
        if seq_len < 1:
            raise ContractViolation("sequence length must be >= 1")
        self.seq_len = seq_len
        self.fc = [Linear(store, f"{name}.fc{k}", feat_dim, branch_dim)
                   for k in (1, 2, 3)]
        self.branch_attn = SelfAttention(store, f"{name}.branch_attn",
                                         branch_dim, branch_dim)
        self.lstm1 = LSTMCell(store, f"{name}.lstm1", branch_dim, out_dim)
        self.lstm2 = LSTMCell(store, f"{name}.lstm2", out_dim, out_dim)
        self._mask = highpass_mask(seq_len)

    def branches(self, features: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """The raw real / imaginary / high-pass branch features."""
        if features.shape[0] == 0:
            raise ContractViolation("cannot encode an empty submap")
        x = pad_sequence(features, self.seq_len)
        xi = [fc(x) for fc in self.fc]
        nu1 = dft(xi[0]).real
        nu2 = dft(xi[1]).imag
        nu3 = idft(apply_mask(dft(xi[2]), self._mask))
        return nu1, nu2, nu3

    def enhance(self, nu: Tensor) -> Tensor:
        """Shared self-attention enhancement, residual so the zero-mean
        high-pass branch survives near-uniform attention weights (a
        high-pass signal sums to zero over the sequence, so its plain
        attention output starts at the origin)."""
        return nu + self.branch_attn(nu)

    def combine(self, nu1: Tensor, nu2: Tensor, nu3: Tensor) -> Tensor:
        """Triple cross-attention: high-pass branch routed by both others."""
        a1 = self.enhance(nu1)
        a2 = self.enhance(nu2)
        a3 = self.enhance(nu3)
        omega1 = attention_weights(a3, a1)
        omega2 = attention_weights(a3, a2)
        product = omega1 * omega2
        # the elementwise product of two stochastic matrices is not
        # stochastic; renormalize rows so kappa stays a convex mix
        combined = product / product.sum(axis=1, keepdims=True)
        return combined @ a3

    def encode_batch(self, features_list: list[Tensor]) -> Tensor:
        """Descriptors for several submaps at once, shape (B, out_dim).

        The combined sequences run through the stacked recurrence in
        lockstep (every submap pads to the same length), which is where
        the per-pair Python overhead would otherwise concentrate.
        """
        kappas = [self.combine(*self.branches(f)) for f in features_list]
        batch = stack(kappas, axis=0)  # (B, T, branch)
        steps = [batch[:, t, :] for t in range(self.seq_len)]
        h2 = self.lstm2.run_steps(self.lstm1.run_steps(steps))
        return h2[-1]

    def __call__(self, features: Tensor) -> Tensor:
        return self.encode_batch([features])[0]


class SequenceEncoder:
    """Frequency-free stand-in used by the ablation: project then recur."""

    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 branch_dim: int, out_dim: int, seq_len: int):
        self.seq_len = seq_len
        self.proj = Linear(store, f"{name}.proj", feat_dim, branch_dim)
        self.lstm1 = LSTMCell(store, f"{name}.lstm1", branch_dim, out_dim)
        self.lstm2 = LSTMCell(store, f"{name}.lstm2", out_dim, out_dim)

    def encode_batch(self, features_list: list[Tensor]) -> Tensor:
        projected = []
        for features in features_list:
            if features.shape[0] == 0:
                raise ContractViolation("cannot encode an empty submap")
            projected.append(self.proj(pad_sequence(features, self.seq_len)).tanh())
        batch = stack(projected, axis=0)
        steps = [batch[:, t, :] for t in range(self.seq_len)]
        h2 = self.lstm2.run_steps(self.lstm1.run_steps(steps))
        return h2[-1]

    def __call__(self, features: Tensor) -> Tensor:
        return self.encode_batch([features])[0]


def sorted_halve(x: Tensor) -> Tensor:
    """Channelwise max-pool halving a set of rows.

    Each channel keeps its top ceil(N/2) order statistics, so the result
    depends only on the multiset of rows: permutation-invariant by
    construction, and appending a copy of an even-sized set reproduces
    the original pooled values twice over.
    """
    n = x.shape[0]
    keep = (n + 1) // 2
    idx = np.argsort(-x.data, axis=0, kind="stable")[:keep]
    return x.take_rows_per_column(idx)


class TextGlobalEncoder:
    """Stacked attention + channelwise max-pooling over sentence features."""

    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 out_dim: int):
        self.in_proj = Linear(store, f"{name}.in_proj", feat_dim, out_dim)
        self.attn1 = SelfAttention(store, f"{name}.attn1", out_dim, out_dim)
        self.attn2 = SelfAttention(store, f"{name}.attn2", out_dim, out_dim)

    def __call__(self, features: Tensor) -> Tensor:
        if features.shape[0] == 0:
            raise ContractViolation("query has no sentences")
        x = self.in_proj(features)
        x = sorted_halve(self.attn1(x))
        x = sorted_halve(self.attn2(x))
        return x.max(axis=0)


def global_alignment_loss(text_desc: Tensor, point_desc: Tensor, gamma: float,
                          mode: str = "corrected") -> Tensor:
    """Cross-modal alignment plus one self-contrastive term per modality.

    The self terms treat each descriptor as its own positive against the
    rest of the batch, pushing unmatched descriptors apart within a
    modality.
    """
    cross = alignment_loss_vectors(text_desc, point_desc, gamma, mode)
    self_text = alignment_loss_vectors(text_desc, text_desc, gamma, mode)
    self_point = alignment_loss_vectors(point_desc, point_desc, gamma, mode)
    return cross + self_text + self_point
