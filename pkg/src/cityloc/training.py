"""Training loops, evaluation protocol, checkpoints, and the ablation matrix."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DataError, NumericError
from .fine import LocalizationPrediction, localization_recall, save_predictions
from .models import CoarseModel, FineModel
from .optim import Adam
from .retrieval import (
    Gallery,
    recall_at_k,
    retrieve,
    save_descriptors,
    save_retrieval_results,
)
from .scenes import Corpus
from .tensor import Tensor, backward, stack

EPS_SET = (5.0, 10.0, 15.0)
K_SET = (1, 5, 10)
RETRIEVAL_KS = (1, 3, 5)


@dataclass
class MetricsReport:
    stage: str
    seed: int
    config_hash: str
    corpus_checksum: str
    epoch_losses: list[dict] = field(default_factory=list)
    retrieval_recall: dict[str, float] | None = None
    localization_recall: dict[str, float] | None = None
    fine_mean_l1: float | None = None
    extra: dict = field(default_factory=dict)
    wall_clock_sec: float | None = None  # volatile, not part of the canonical form

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_sec")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True)


def _pairs_for(corpus: Corpus) -> list:
    try:
        return [(corpus.submap_index[q.gt_submap_id], q) for q in corpus.queries]
    except KeyError as e:
        raise DataError(f"query references unknown submap {e}") from e


def _corpus_checksum(corpus: Corpus) -> str:
    return corpus.manifest.checksum if corpus.manifest else "unmanifested"


def train_coarse(config: RunConfig, corpus: Corpus,
                 log=None) -> tuple[CoarseModel, MetricsReport]:
    """Minimize the enabled coarse losses over matched (submap, query) pairs."""
    config.validate()
    start = time.perf_counter()
    model = CoarseModel(config)
    opt = Adam(model.store, lr=config.coarse_lr)
    rng = np.random.default_rng([config.seed, 101])
    pairs = _pairs_for(corpus)
    report = MetricsReport(
        stage="coarse", seed=config.seed, config_hash=config.config_hash(),
        corpus_checksum=_corpus_checksum(corpus),
    )
    for epoch in range(config.coarse_epochs):
        order = rng.permutation(len(pairs))
        losses, term_sums = [], {}
        for lo in range(0, len(order), config.coarse_batch):
            batch_idx = order[lo:lo + config.coarse_batch]
            if len(batch_idx) < 2:
                continue  # a singleton batch carries no contrastive signal
            batch = [pairs[i] for i in batch_idx]
            model.store.zero_grad()
            loss, terms = model.batch_loss(batch, noise_rng=rng)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"coarse loss diverged at epoch {epoch}, step {lo // config.coarse_batch}")
            backward(loss, model.store.params)
            opt.step()
            losses.append(float(loss.data))
            for k, v in terms.items():
                term_sums[k] = term_sums.get(k, 0.0) + v
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        entry.update({k: v / len(losses) for k, v in term_sums.items() if k != "loss"})
        report.epoch_losses.append(entry)
        if log:
            log(f"[coarse] epoch {epoch}: loss {entry['loss']:.4f}")
    report.wall_clock_sec = time.perf_counter() - start
    return model, report


def train_fine(config: RunConfig, corpus: Corpus,
               coarse_state: dict[str, np.ndarray] | None = None,
               log=None) -> tuple[FineModel, MetricsReport]:
    """Minimize the uncertainty loss on (query, ground-truth submap) pairs."""
    config.validate()
    start = time.perf_counter()
    model = FineModel(config)
    if coarse_state is not None:
        model.warm_start_from(coarse_state)
    opt = Adam(model.store, lr=config.fine_lr)
    rng = np.random.default_rng([config.seed, 202])
    pairs = _pairs_for(corpus)
    report = MetricsReport(
        stage="fine", seed=config.seed, config_hash=config.config_hash(),
        corpus_checksum=_corpus_checksum(corpus),
    )
    for epoch in range(config.fine_epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for lo in range(0, len(order), config.fine_batch):
            batch = [pairs[i] for i in order[lo:lo + config.fine_batch]]
            model.store.zero_grad()
            loss = stack([model.loss(s, q) for s, q in batch]).mean()
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"fine loss diverged at epoch {epoch}, step {lo // config.fine_batch}")
            backward(loss, model.store.params)
            opt.step()
            losses.append(float(loss.data))
        report.epoch_losses.append({"epoch": epoch, "loss": float(np.mean(losses))})
        if log:
            log(f"[fine] epoch {epoch}: loss {report.epoch_losses[-1]['loss']:.4f}")
    report.wall_clock_sec = time.perf_counter() - start
    return model, report


# -- evaluation ---------------------------------------------------------------


def fine_gt_error(model: FineModel, corpus: Corpus) -> float:
    """Mean planar L1 error when pairing each query with its true submap."""
    errors = []
    for submap, query in _pairs_for(corpus):
        p = model.predict(submap, query)
        errors.append(abs(p.position[0] - query.gt_position[0])
                      + abs(p.position[1] - query.gt_position[1]))
    return float(np.mean(errors))


def center_baseline_error(corpus: Corpus) -> float:
    """The zero-offset baseline: predict every submap's center."""
    errors = []
    for submap, query in _pairs_for(corpus):
        errors.append(abs(submap.center[0] - query.gt_position[0])
                      + abs(submap.center[1] - query.gt_position[1]))
    return float(np.mean(errors))


def evaluate(coarse_model: CoarseModel, corpus: Corpus,
             fine_model: FineModel | None = None,
             out_dir: str | Path | None = None,
             svg: bool = False) -> MetricsReport:
    """Gallery retrieval (and localization when a fine model is given)."""
    start = time.perf_counter()
    config = coarse_model.config
    gallery = Gallery.build([(s.id, coarse_model.point_descriptor(s))
                             for s in corpus.submaps])
    k_cand = max(K_SET)
    results = [
        retrieve(coarse_model.text_descriptor(q), gallery, k=max(k_cand,
                                                                 *RETRIEVAL_KS),
                 query_id=q.id)
        for q in corpus.queries
    ]
    gt_map = {q.id: q.gt_submap_id for q in corpus.queries}
    recall = recall_at_k(results, gt_map, ks=RETRIEVAL_KS)

    report = MetricsReport(
        stage="eval", seed=config.seed, config_hash=config.config_hash(),
        corpus_checksum=_corpus_checksum(corpus),
        retrieval_recall={str(k): v for k, v in recall.items()},
    )

    predictions: list[LocalizationPrediction] = []
    if fine_model is not None:
        by_query: dict[int, list[LocalizationPrediction]] = {}
        for q, r in zip(corpus.queries, results):
            cands = []
            for sid in r.submap_ids[:k_cand]:
                cands.append(fine_model.predict(corpus.submap_index[sid], q))
            by_query[q.id] = cands
            predictions.extend(cands)
        loc = localization_recall(by_query,
                                  {q.id: q.gt_position for q in corpus.queries},
                                  eps_set=EPS_SET, k_set=K_SET)
        report.localization_recall = {
            f"eps{int(e)}_k{k}": v for (e, k), v in sorted(loc.items())
        }
        report.fine_mean_l1 = fine_gt_error(fine_model, corpus)

    report.wall_clock_sec = time.perf_counter() - start
    if out_dir is not None:
        from .reports import write_report_files

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        point_entries = [{"id": s.id, "modality": "point",
                          "vector": list(map(float, coarse_model.point_descriptor(s)))}
                         for s in corpus.submaps]
        text_entries = [{"id": q.id, "modality": "text",
                         "vector": list(map(float, coarse_model.text_descriptor(q)))}
                        for q in corpus.queries]
        save_descriptors(out_dir / "descriptors.json", point_entries + text_entries)
        save_retrieval_results(out_dir / "retrieval.jsonl", results)
        if predictions:
            save_predictions(out_dir / "predictions.jsonl", predictions)
        write_report_files(out_dir, report, svg=svg)
    return report


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str | Path, store, meta: dict) -> None:
    arrays = {f"param::{k}": v for k, v in store.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        npz = np.load(path)
    except FileNotFoundError as e:
        raise DataError(f"checkpoint not found: {path}") from e
    if "__meta__" not in npz.files:
        raise DataError(f"not a checkpoint file: {path}")
    meta = json.loads(bytes(npz["__meta__"]).decode())
    state = {k[len("param::"):]: npz[k] for k in npz.files
             if k.startswith("param::")}
    return state, meta


def checkpoint_meta(config: RunConfig, stage: str, corpus_checksum: str) -> dict:
    return {"stage": stage, "seed": config.seed,
            "config": config.to_dict(), "config_hash": config.config_hash(),
            "corpus_checksum": corpus_checksum}


def load_coarse_model(path: str | Path) -> CoarseModel:
    state, meta = load_checkpoint(path)
    if meta.get("stage") != "coarse":
        raise DataError(f"expected a coarse checkpoint, got {meta.get('stage')!r}")
    config = RunConfig.from_dict(meta["config"])
    model = CoarseModel(config)
    model.store.load_state_dict(state)
    return model


def load_fine_model(path: str | Path) -> FineModel:
    state, meta = load_checkpoint(path)
    if meta.get("stage") != "fine":
        raise DataError(f"expected a fine checkpoint, got {meta.get('stage')!r}")
    config = RunConfig.from_dict(meta["config"])
    model = FineModel(config)
    model.store.load_state_dict(state)
    return model


# -- ablation matrix ----------------------------------------------------------

# cell name -> (stage, config overrides)
ABLATION_CELLS: dict[str, tuple[str, dict]] = {
    "full": ("coarse", {}),
    "no_bezier": ("coarse", {"use_bezier": False}),
    "no_frequency": ("coarse", {"use_frequency": False}),
    "aggregation_maxpool": ("coarse", {"aggregation": "maxpool"}),
    "loss_spatial_only": ("coarse", {"loss_object": False, "loss_global": False}),
    "loss_object_only": ("coarse", {"loss_spatial": False, "loss_global": False}),
    "loss_global_only": ("coarse", {"loss_spatial": False, "loss_object": False}),
    "loss_spatial_object": ("coarse", {"loss_global": False}),
    "loss_spatial_global": ("coarse", {"loss_object": False}),
    "loss_object_global": ("coarse", {"loss_spatial": False}),
    "fine_full": ("fine", {}),
    "fine_no_precision": ("fine", {"lambda_head": False}),
}


def ablate(base_config: RunConfig, cells: list[str], seeds: list[int],
           train_corpus: Corpus, eval_corpus: Corpus,
           out_dir: str | Path | None = None, log=None) -> dict:
    """Train and evaluate every (cell, seed) combination side by side.

    Coarse cells report retrieval recall; fine cells report the
    ground-truth-pairing localization error against the center baseline.
    """
    if not cells:
        raise ConfigError("ablation matrix is empty")
    unknown = [c for c in cells if c not in ABLATION_CELLS]
    if unknown:
        raise ConfigError(f"unknown ablation cells: {unknown} "
                          f"(available: {sorted(ABLATION_CELLS)})")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")

    out: dict = {"cells": {}, "seeds": list(seeds),
                 "baselines": {"center_mean_l1": center_baseline_error(eval_corpus)}}
    for cell in cells:
        stage, overrides = ABLATION_CELLS[cell]
        per_seed = []
        for seed in seeds:
            config = base_config.replace(seed=seed, **overrides)
            if log:
                log(f"[ablate] {cell} seed {seed} ({stage})")
            if stage == "coarse":
                model, _ = train_coarse(config, train_corpus)
                report = evaluate(model, eval_corpus)
                per_seed.append({"seed": seed,
                                 **{f"recall@{k}": report.retrieval_recall[str(k)]
                                    for k in RETRIEVAL_KS}})
            else:
                model, _ = train_fine(config, train_corpus)
                per_seed.append({"seed": seed,
                                 "mean_l1": fine_gt_error(model, eval_corpus)})
        metrics = [k for k in per_seed[0] if k != "seed"]
        median = {m: float(statistics.median(row[m] for row in per_seed))
                  for m in metrics}
        out["cells"][cell] = {"stage": stage, "per_seed": per_seed,
                              "median": median}

    if out_dir is not None:
        from .reports import write_ablation_files

        write_ablation_files(Path(out_dir), out)
    return out
