"""Fine-stage localization: cross-modal fusion and uncertainty-aware heads.

Fusion alternates cross-attention (sentence features attending to the
submap's object features) with a recurrent update over the attended
sequence; the final hidden sequence mean-pools into one fused vector.
Two small heads regress the planar offset from the submap center and a
positive precision that weighs each sample's loss: confident samples pay
full price for their error, ambiguous ones buy themselves slack at the
cost of the 1/precision regularizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError
from .nn import CrossAttention, LSTMCell, MLP, ParameterStore
from .tensor import Tensor

LAMBDA_FLOOR = 1e-3


class CrossModalFuser:
    def __init__(self, store: ParameterStore, name: str, feat_dim: int,
                 fuse_dim: int, n_blocks: int = 2):
        if n_blocks < 1:
            raise ContractViolation("fusion needs at least one block")
        self.blocks = []
        d_q = feat_dim
        for b in range(n_blocks):
            attn = CrossAttention(store, f"{name}.block{b}.attn", d_q, feat_dim,
                                  fuse_dim)
            cell = LSTMCell(store, f"{name}.block{b}.cell", fuse_dim, fuse_dim)
            self.blocks.append((attn, cell))
            d_q = fuse_dim

    def __call__(self, text_feats: Tensor, object_feats: Tensor) -> Tensor:
        if text_feats.shape[0] == 0 or object_feats.shape[0] == 0:
            raise ContractViolation("fusion requires non-empty feature sets")
        current = text_feats
        for attn, cell in self.blocks:
            attended = attn(current, object_feats)
            current = cell.run(attended)
        return current.mean(axis=0)


class LocalizationHead:
    def __init__(self, store: ParameterStore, name: str, fuse_dim: int,
                 hidden: int):
        self.delta_head = MLP(store, f"{name}.delta", fuse_dim, hidden, 2)
        self.lam_head = MLP(store, f"{name}.lam", fuse_dim, hidden, 1)

    def __call__(self, fused: Tensor, center, lambda_head: bool = True):
        """Returns (predicted position, precision), both tensors.

        With the precision branch disabled the precision is pinned at
        1.0, reducing the loss to plain L1 error plus a constant.
        """
        f = fused.reshape((1, fused.size))
        delta = self.delta_head(f).reshape((2,))
        position = delta + Tensor(np.asarray(center, dtype=np.float64))
        if lambda_head:
            lam = self.lam_head(f).reshape(()).softplus() + LAMBDA_FLOOR
        else:
            lam = Tensor(1.0)
        return position, lam


def uncertainty_loss(position: Tensor, lam: Tensor, gt_position) -> Tensor:
    """Precision-weighted L1 error plus the inverse-precision regularizer.

    loss = lam * |pred - gt|_1 + 1/lam. For a fixed error e the optimum
    sits at lam = 1/sqrt(e) with value 2*sqrt(e).
    """
    if float(lam.data) <= 0:
        raise ContractViolation(f"precision must be positive, got {float(lam.data)}")
    err = (position - Tensor(np.asarray(gt_position, dtype=np.float64))).abs().sum()
    return lam * err + lam**-1.0


@dataclass
class LocalizationPrediction:
    query_id: int
    submap_id: int
    position: tuple[float, float]
    lam: float


def localization_recall(
    predictions: dict[int, list[LocalizationPrediction]],
    ground_truth: dict[int, tuple[float, float]],
    eps_set: tuple[float, ...] = (5.0, 10.0, 15.0),
    k_set: tuple[int, ...] = (1, 5, 10),
) -> dict[tuple[float, int], float]:
    """A query scores at (eps, k) if any top-k candidate lands within eps."""
    if not predictions:
        raise DataError("no predictions to score")
    hits = {(e, k): 0 for e in eps_set for k in k_set}
    for qid, gt in ground_truth.items():
        cands = predictions.get(qid)
        if not cands:
            raise DataError(f"missing predictions for query {qid}")
        dists = [np.hypot(p.position[0] - gt[0], p.position[1] - gt[1])
                 for p in cands]
        for e in eps_set:
            for k in k_set:
                if any(d < e for d in dists[:k]):
                    hits[(e, k)] += 1
    n = len(ground_truth)
    return {key: v / n for key, v in hits.items()}


def save_predictions(path: str | Path,
                     predictions: list[LocalizationPrediction]) -> None:
    with open(path, "w") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "query_id": p.query_id,
                "submap_id": p.submap_id,
                "L_pr": list(p.position),
                "lambda": p.lam,
            }, sort_keys=True) + "\n")


def load_predictions(path: str | Path) -> list[LocalizationPrediction]:
    out = []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        out.append(LocalizationPrediction(
            query_id=rec["query_id"], submap_id=rec["submap_id"],
            position=tuple(rec["L_pr"]), lam=rec["lambda"],
        ))
    return out
