"""Run configuration: one flat record shared by data generation, both
training stages, evaluation, and the ablation matrix.

Defaults are desk scale (minutes on a laptop CPU); the larger settings
from the reference training recipe (batch 64, 100 fine epochs, width
256) remain selectable through the same fields.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .scenes import GenerationConfig


@dataclass
class RunConfig:
    seed: int = 0

    # feature widths
    feat_dim: int = 64
    edge_dim: int = 32
    geo_dim: int = 16
    branch_dim: int = 64
    global_dim: int = 64
    proj_dim: int = 64
    fuse_dim: int = 64
    head_hidden: int = 32

    # alignment machinery
    gamma: float = 0.1
    bezier_iterations: int = 2
    align_mode: str = "corrected"  # or "literal"

    # module toggles (ablations)
    use_bezier: bool = True
    use_frequency: bool = True
    aggregation: str = "gaussian"  # or "maxpool"

    # loss toggles
    loss_spatial: bool = True
    loss_object: bool = True
    loss_global: bool = True
    lambda_head: bool = True

    # optimization
    coarse_epochs: int = 20
    coarse_batch: int = 16
    coarse_lr: float = 5e-4
    fine_epochs: int = 30
    fine_batch: int = 16
    fine_lr: float = 3e-4

    # corpus generation
    n_submaps: int = 50
    n_queries: int = 500
    ns_min: int = 4
    ns_max: int = 10
    nq_min: int = 3
    nq_max: int = 6
    extent: float = 30.0

    def validate(self) -> None:
        positive = ("feat_dim", "edge_dim", "geo_dim", "branch_dim", "global_dim",
                    "proj_dim", "fuse_dim", "head_hidden", "coarse_epochs",
                    "coarse_batch", "fine_epochs", "fine_batch",
                    "bezier_iterations")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("gamma", "coarse_lr", "fine_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.align_mode not in ("corrected", "literal"):
            raise ConfigError(f"unknown align_mode {self.align_mode!r}")
        if self.aggregation not in ("gaussian", "maxpool"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if not (self.loss_spatial or self.loss_object or self.loss_global):
            raise ConfigError("at least one coarse loss must be enabled")
        self.generation_config().validate()

    @property
    def seq_len(self) -> int:
        # spectrum length: submap instance sequences zero-padded to the max
        return self.ns_max

    def generation_config(self, id_offset: int = 0) -> GenerationConfig:
        return GenerationConfig(
            n_submaps=self.n_submaps, n_queries=self.n_queries,
            ns_min=self.ns_min, ns_max=self.ns_max,
            nq_min=self.nq_min, nq_max=self.nq_max,
            extent=self.extent, id_offset=id_offset,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def replace(self, **overrides) -> "RunConfig":
        cfg = dataclasses.replace(self, **overrides)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_config_file(path: str | Path) -> dict:
    try:
        values = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {path}") from e
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    return values


def build_config(file_values: dict | None = None, **flag_overrides) -> RunConfig:
    """Assemble a config; explicit flags take precedence over the file."""
    values: dict = {}
    if file_values:
        values.update(file_values)
    values.update({k: v for k, v in flag_overrides.items() if v is not None})
    return RunConfig.from_dict(values)
