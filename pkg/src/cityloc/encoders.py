"""Learnable frontends mapping sentences and object instances to features.

Both encoders are small and trained jointly with the rest of the model;
the closed sentence templates make a word-level vocabulary sufficient.
Feature width is shared across modalities because the downstream
similarity losses compare rows from both sides directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, VocabularyError
from .nn import Linear, ParameterStore
from .scenes import CLASSES, COLORS, SceneSubmap, _RELATION_PHRASES
from .tensor import Tensor, stack


def default_vocabulary() -> list[str]:
    """Every word the sentence templates can produce, in a fixed order."""
    words: list[str] = ["the", "pose", "is", "a"]
    for phrase in _RELATION_PHRASES.values():
        for w in phrase.split():
            if w not in words:
                words.append(w)
    for color in COLORS:
        for w in color.split("-"):
            if w not in words:
                words.append(w)
    for klass in CLASSES:
        for w in klass.split("-"):
            if w not in words:
                words.append(w)
    return words


def tokenize(sentence: str) -> list[str]:
    return sentence.lower().split()


def save_vocabulary(path: str | Path, vocab: list[str]) -> None:
    Path(path).write_text("\n".join(vocab) + "\n")


def load_vocabulary(path: str | Path) -> list[str]:
    return Path(path).read_text().splitlines()


@dataclass
class TextFeatureSet:
    features: Tensor  # (N_q, D)
    query_id: int


@dataclass
class ObjectFeatureSet:
    features: Tensor  # (N_s, D)
    submap_id: int
    centroids: np.ndarray  # (N_s, 3), kept for the offset graph


class TextEncoder:
    """Mean of token embeddings, then one linear layer with tanh."""

    def __init__(self, store: ParameterStore, name: str, vocab: list[str],
                 feat_dim: int):
        self.vocab = {w: i for i, w in enumerate(vocab)}
        self.feat_dim = feat_dim
        self.embeddings = store.param(f"{name}.embeddings",
                                      (len(vocab), feat_dim),
                                      scale=1.0 / np.sqrt(feat_dim))
        self.out = Linear(store, f"{name}.out", feat_dim, feat_dim)

    def sentence_ids(self, sentence: str) -> np.ndarray:
        ids = []
        for token in tokenize(sentence):
            if token not in self.vocab:
                raise VocabularyError(f"token {token!r} not in vocabulary")
            ids.append(self.vocab[token])
        if not ids:
            raise ContractViolation("empty sentence")
        return np.asarray(ids)

    def encode(self, sentences, query_id: int = -1) -> TextFeatureSet:
        rows = []
        for sentence in sentences:
            ids = self.sentence_ids(sentence)
            rows.append(self.embeddings[ids].mean(axis=0))
        feats = self.out(stack(rows, axis=0)).tanh()
        return TextFeatureSet(feats, query_id)


class ObjectEncoder:
    """Class + color embeddings plus a linear map of the centered centroid."""

    def __init__(self, store: ParameterStore, name: str, feat_dim: int):
        self.feat_dim = feat_dim
        self.class_emb = store.param(f"{name}.class_emb",
                                     (len(CLASSES), feat_dim),
                                     scale=1.0 / np.sqrt(feat_dim))
        self.color_emb = store.param(f"{name}.color_emb",
                                     (len(COLORS), feat_dim),
                                     scale=1.0 / np.sqrt(feat_dim))
        self.geo = Linear(store, f"{name}.geo", 3, feat_dim, scale=0.1)
        self._class_idx = {c: i for i, c in enumerate(CLASSES)}
        self._color_idx = {c: i for i, c in enumerate(COLORS)}

    def encode(self, submap: SceneSubmap) -> ObjectFeatureSet:
        if len(submap.instances) < 2:
            raise ContractViolation(
                f"submap {submap.id} has {len(submap.instances)} instances; "
                "the pairwise graph needs at least 2"
            )
        cls_ids = np.array([self._class_idx[o.klass] for o in submap.instances])
        col_ids = np.array([self._color_idx[o.color] for o in submap.instances])
        centroids = np.array([o.centroid for o in submap.instances], dtype=np.float64)
        rel = centroids - np.array([*submap.center, 0.0])
        feats = (self.class_emb[cls_ids] + self.color_emb[col_ids]
                 + self.geo(Tensor(rel))).tanh()
        return ObjectFeatureSet(feats, submap.id, centroids)
