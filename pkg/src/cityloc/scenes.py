"""Synthetic city scenes: submaps of labeled objects plus spoken queries.

Each submap is a square patch of the city holding a handful of object
instances drawn from closed class/color vocabularies. Queries are
generated by sampling a pose inside a submap and describing its spatial
relation to some of the objects, so every sentence is true of the
ground-truth position by construction.

Spatial relation rules (2-d, pose vs object centroid):

* ``on-top-of``  when the planar distance is below 1 m;
* a cardinal direction (``north``/``south``/``east``/``west``) when the
  dominant axis offset is at least the 1 m dead-zone, ties between axes
  resolved toward north/south;
* ``near``       otherwise (only reachable within ~1.42 m, hence always
  inside the 5 m near radius).

Object z coordinates are generated for realism but play no role in the
relation rules; the localization target is planar.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptCorpusError, DataError, SchemaVersionError

SCHEMA_VERSION = 1

CLASSES = ("pole", "sidewalk", "traffic-light", "sign", "building", "wall",
           "tree", "road")
COLORS = ("gray", "dark-green", "red", "blue", "brown", "black", "white")
RELATIONS = ("north", "south", "east", "west", "on-top-of", "near")

ON_TOP_RADIUS = 1.0
CARDINAL_DEADZONE = 1.0
NEAR_RADIUS = 5.0

_RELATION_PHRASES = {
    "north": "north of",
    "south": "south of",
    "east": "east of",
    "west": "west of",
    "on-top-of": "on top of",
    "near": "near",
}


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    klass: str
    color: str
    centroid: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSubmap:
    id: int
    instances: tuple[ObjectInstance, ...]
    center: tuple[float, float]
    extent: float


@dataclass(frozen=True)
class Query:
    id: int
    descriptions: tuple[str, ...]
    gt_position: tuple[float, float]
    gt_submap_id: int


@dataclass
class GenerationConfig:
    n_submaps: int = 50
    n_queries: int = 500
    ns_min: int = 4
    ns_max: int = 10
    nq_min: int = 3
    nq_max: int = 6
    extent: float = 30.0
    spacing_factor: float = 2.5  # grid spacing = factor * extent
    z_max: float = 6.0
    id_offset: int = 0

    def validate(self) -> None:
        if self.ns_min < 2:
            raise ConfigError("submaps need at least 2 instances (pairwise graph)")
        if self.ns_max < self.ns_min or self.nq_max < self.nq_min or self.nq_min < 1:
            raise ConfigError("invalid instance/sentence count ranges")
        if self.n_submaps < 1 or self.n_queries < 1:
            raise ConfigError("corpus must contain submaps and queries")
        if self.extent <= ON_TOP_RADIUS:
            raise ConfigError("extent too small for the relation rules")
        if self.spacing_factor <= 2.0:
            raise ConfigError("submaps would overlap; spacing_factor must exceed 2")

    def to_dict(self) -> dict:
        return {
            "n_submaps": self.n_submaps, "n_queries": self.n_queries,
            "ns_min": self.ns_min, "ns_max": self.ns_max,
            "nq_min": self.nq_min, "nq_max": self.nq_max,
            "extent": self.extent, "spacing_factor": self.spacing_factor,
            "z_max": self.z_max, "id_offset": self.id_offset,
        }


@dataclass
class DatasetManifest:
    seed: int
    split: str
    n_submaps: int
    n_queries: int
    params: dict
    checksum: str
    schema_version: int = SCHEMA_VERSION


@dataclass
class Corpus:
    submaps: list[SceneSubmap]
    queries: list[Query]
    manifest: DatasetManifest | None = None
    submap_index: dict[int, SceneSubmap] = field(init=False)

    def __post_init__(self):
        self.submap_index = {s.id: s for s in self.submaps}


def relation_truth(pose, instance: ObjectInstance) -> str:
    """The unique relation label that holds between a pose and an object."""
    dx = float(pose[0]) - instance.centroid[0]
    dy = float(pose[1]) - instance.centroid[1]
    dist = math.hypot(dx, dy)
    if dist < ON_TOP_RADIUS:
        return "on-top-of"
    if abs(dy) >= abs(dx) and abs(dy) >= CARDINAL_DEADZONE:
        return "north" if dy > 0 else "south"
    if abs(dx) > abs(dy) and abs(dx) >= CARDINAL_DEADZONE:
        return "east" if dx > 0 else "west"
    return "near"


def render_sentence(relation: str, instance: ObjectInstance) -> str:
    color = instance.color.replace("-", " ")
    klass = instance.klass.replace("-", " ")
    return f"The pose is {_RELATION_PHRASES[relation]} a {color} {klass}"


def _sample_submap(rng: np.random.Generator, submap_id: int,
                   center: tuple[float, float], cfg: GenerationConfig,
                   next_instance_id: int) -> tuple[SceneSubmap, int]:
    n = int(rng.integers(cfg.ns_min, cfg.ns_max + 1))
    instances = []
    for _ in range(n):
        cx = center[0] + rng.uniform(-cfg.extent, cfg.extent)
        cy = center[1] + rng.uniform(-cfg.extent, cfg.extent)
        cz = rng.uniform(0.0, cfg.z_max)
        instances.append(ObjectInstance(
            id=next_instance_id,
            klass=CLASSES[int(rng.integers(len(CLASSES)))],
            color=COLORS[int(rng.integers(len(COLORS)))],
            centroid=(float(cx), float(cy), float(cz)),
        ))
        next_instance_id += 1
    return SceneSubmap(submap_id, tuple(instances), center, cfg.extent), next_instance_id


def generate_city(seed: int, cfg: GenerationConfig) -> tuple[list[SceneSubmap], list[Query]]:
    """Deterministically generate one split's submaps and queries."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    # Submap centers on a jittered grid; spacing guarantees that a pose
    # near its own center cannot be closer to a neighboring center.
    spacing = cfg.spacing_factor * cfg.extent
    cols = math.ceil(math.sqrt(cfg.n_submaps))
    centers = []
    for i in range(cfg.n_submaps):
        gx = (i % cols) * spacing + rng.uniform(-0.2, 0.2) * cfg.extent
        gy = (i // cols) * spacing + rng.uniform(-0.2, 0.2) * cfg.extent
        centers.append((float(gx), float(gy)))
    center_arr = np.asarray(centers)

    submaps: list[SceneSubmap] = []
    next_instance = 0
    for i, center in enumerate(centers):
        submap, next_instance = _sample_submap(
            rng, cfg.id_offset + i, center, cfg, next_instance)
        submaps.append(submap)

    queries: list[Query] = []
    for qi in range(cfg.n_queries):
        s_idx = int(rng.integers(cfg.n_submaps))
        submap = submaps[s_idx]
        pose = None
        for _ in range(200):
            cand = (submap.center[0] + rng.uniform(-cfg.extent, cfg.extent),
                    submap.center[1] + rng.uniform(-cfg.extent, cfg.extent))
            d = np.hypot(center_arr[:, 0] - cand[0], center_arr[:, 1] - cand[1])
            if int(np.argmin(d)) == s_idx:
                pose = cand
                break
        if pose is None:
            raise ConfigError("could not place a pose nearest to its own submap; "
                              "increase spacing_factor")
        n_sentences = int(rng.integers(cfg.nq_min, cfg.nq_max + 1))
        replace = n_sentences > len(submap.instances)
        chosen = rng.choice(len(submap.instances), size=n_sentences, replace=replace)
        descriptions = tuple(
            render_sentence(relation_truth(pose, submap.instances[int(c)]),
                            submap.instances[int(c)])
            for c in chosen
        )
        queries.append(Query(
            id=cfg.id_offset + qi,
            descriptions=descriptions,
            gt_position=(float(pose[0]), float(pose[1])),
            gt_submap_id=submap.id,
        ))
    return submaps, queries


# -- persistence -----------------------------------------------------------


def _submap_record(s: SceneSubmap) -> dict:
    return {
        "id": s.id,
        "center": list(s.center),
        "extent": s.extent,
        "instances": [
            {"id": o.id, "class": o.klass, "color": o.color,
             "centroid": list(o.centroid)}
            for o in s.instances
        ],
    }


def _query_record(q: Query) -> dict:
    return {
        "id": q.id,
        "descriptions": list(q.descriptions),
        "gt_position": list(q.gt_position),
        "gt_submap_id": q.gt_submap_id,
    }


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def corpus_checksum(submap_text: str, query_text: str) -> str:
    h = hashlib.sha256()
    h.update(submap_text.encode())
    h.update(query_text.encode())
    return h.hexdigest()


def save_corpus(path: str | Path, submaps: list[SceneSubmap], queries: list[Query],
                seed: int, split: str, params: dict) -> DatasetManifest:
    if not submaps or not queries:
        raise DataError("refusing to save an empty corpus")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    submap_text = _jsonl(_submap_record(s) for s in submaps)
    query_text = _jsonl(_query_record(q) for q in queries)
    manifest = DatasetManifest(
        seed=seed, split=split, n_submaps=len(submaps), n_queries=len(queries),
        params=params, checksum=corpus_checksum(submap_text, query_text),
    )
    (path / "submaps.jsonl").write_text(submap_text)
    (path / "queries.jsonl").write_text(query_text)
    (path / "manifest.json").write_text(json.dumps({
        "schema_version": manifest.schema_version,
        "seed": manifest.seed,
        "split": manifest.split,
        "n_submaps": manifest.n_submaps,
        "n_queries": manifest.n_queries,
        "params": manifest.params,
        "checksum": manifest.checksum,
    }, sort_keys=True, indent=1) + "\n")
    return manifest


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    try:
        raw = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise DataError(f"no manifest under {path}") from e
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported corpus schema {raw.get('schema_version')!r}")
    submap_text = (path / "submaps.jsonl").read_text()
    query_text = (path / "queries.jsonl").read_text()
    if corpus_checksum(submap_text, query_text) != raw["checksum"]:
        raise CorruptCorpusError(f"checksum mismatch for corpus at {path}")

    submaps = []
    for line in submap_text.splitlines():
        rec = json.loads(line)
        submaps.append(SceneSubmap(
            id=rec["id"],
            instances=tuple(ObjectInstance(o["id"], o["class"], o["color"],
                                           tuple(o["centroid"]))
                            for o in rec["instances"]),
            center=tuple(rec["center"]),
            extent=rec["extent"],
        ))
    queries = []
    for line in query_text.splitlines():
        rec = json.loads(line)
        queries.append(Query(
            id=rec["id"],
            descriptions=tuple(rec["descriptions"]),
            gt_position=tuple(rec["gt_position"]),
            gt_submap_id=rec["gt_submap_id"],
        ))
    manifest = DatasetManifest(
        seed=raw["seed"], split=raw["split"], n_submaps=raw["n_submaps"],
        n_queries=raw["n_queries"], params=raw["params"],
        checksum=raw["checksum"], schema_version=raw["schema_version"],
    )
    return Corpus(submaps, queries, manifest)


SPLITS = ("train", "val", "test")
_SPLIT_ID_STRIDE = 1_000_000


def generate_splits(seed: int, cfg: GenerationConfig, out_dir: str | Path) -> dict:
    """Write train/val/test corpora with disjoint id ranges under ``out_dir``."""
    out_dir = Path(out_dir)
    manifests = {}
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(SPLITS))
    for idx, (split, child) in enumerate(zip(SPLITS, children)):
        split_cfg = GenerationConfig(**{**cfg.to_dict(),
                                        "id_offset": idx * _SPLIT_ID_STRIDE})
        split_seed = int(child.generate_state(1)[0])
        submaps, queries = generate_city(split_seed, split_cfg)
        manifests[split] = save_corpus(out_dir / split, submaps, queries,
                                       seed=split_seed, split=split,
                                       params=split_cfg.to_dict())
    return manifests
