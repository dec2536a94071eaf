"""Coarse-stage gallery: exact nearest-neighbor search and recall metrics.

The gallery holds one global descriptor per submap. Search is an exact
scan (desk-scale galleries make an index pointless); ties break toward
the smaller submap id so results are reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError


@dataclass
class Gallery:
    ids: list[int]
    vectors: np.ndarray  # (N, D)

    @classmethod
    def build(cls, entries: list[tuple[int, np.ndarray]]) -> "Gallery":
        if not entries:
            raise ContractViolation("gallery must not be empty")
        ids = [i for i, _ in entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation("duplicate submap ids in gallery")
        vectors = np.stack([np.asarray(v, dtype=np.float64) for _, v in entries])
        return cls(ids, vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class RetrievalResult:
    query_id: int
    submap_ids: list[int]
    distances: list[float]


def retrieve(query_vector: np.ndarray, gallery: Gallery, k: int,
             query_id: int = -1) -> RetrievalResult:
    """Exact top-k by Euclidean distance, ties broken by ascending id."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (gallery.dim,):
        raise ContractViolation(
            f"query dimensionality {q.shape} does not match gallery ({gallery.dim},)")
    k = min(k, len(gallery.ids))
    dist = np.sqrt(((gallery.vectors - q) ** 2).sum(axis=1))
    order = np.lexsort((np.asarray(gallery.ids), dist))[:k]
    return RetrievalResult(
        query_id=query_id,
        submap_ids=[gallery.ids[i] for i in order],
        distances=[float(dist[i]) for i in order],
    )


def recall_at_k(results: list[RetrievalResult], ground_truth: dict[int, int],
                ks: tuple[int, ...] = (1, 3, 5)) -> dict[int, float]:
    """Fraction of queries whose true submap appears in the top k."""
    if not results:
        raise DataError("no retrieval results to score")
    hits = {k: 0 for k in ks}
    for r in results:
        if r.query_id not in ground_truth:
            raise DataError(f"missing ground truth for query {r.query_id}")
        true_id = ground_truth[r.query_id]
        for k in ks:
            if true_id in r.submap_ids[:k]:
                hits[k] += 1
    return {k: hits[k] / len(results) for k in ks}


# -- dump formats ------------------------------------------------------------


def save_descriptors(path: str | Path, entries: list[dict]) -> None:
    """JSON array of {id, modality, vector} records."""
    Path(path).write_text(json.dumps(entries, sort_keys=True) + "\n")


def load_descriptors(path: str | Path) -> list[dict]:
    records = json.loads(Path(path).read_text())
    for r in records:
        if not {"id", "modality", "vector"} <= set(r):
            raise DataError(f"malformed descriptor record: {sorted(r)}")
    return records


def save_retrieval_results(path: str | Path, results: list[RetrievalResult]) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps({
                "query_id": r.query_id,
                "topk": [{"id": i, "dist": d}
                         for i, d in zip(r.submap_ids, r.distances)],
            }, sort_keys=True) + "\n")


def load_retrieval_results(path: str | Path) -> list[RetrievalResult]:
    results = []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        results.append(RetrievalResult(
            query_id=rec["query_id"],
            submap_ids=[e["id"] for e in rec["topk"]],
            distances=[e["dist"] for e in rec["topk"]],
        ))
    return results
