"""Run configuration: one versioned document controlling every stage.

The semantic hash covers only parameters that change computed results
(never file paths), so moving inputs around does not invalidate
provenance lines in previously written outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .errors import DomainError, SchemaError
from .gmm import COV_STRUCTURES

CONFIG_FORMAT = "routinesig-config"
CONFIG_VERSION = 1


@dataclass
class RunConfig:
    """Knobs for fitting, segmentation, distances, and synthesis."""

    seed: int = 0
    pin_k: int | None = None            # fit exactly this K (fit command)
    k_min: int = 2                      # sweep grid, inclusive
    k_max: int = 12
    structures: list[str] = field(default_factory=lambda: list(COV_STRUCTURES))
    n_restarts: int = 2
    segment_days: list[int] = field(default_factory=lambda: [135, 30])
    metrics: list[str] = field(default_factory=lambda: ["jsd", "cosine"])
    reference: str = "mean"             # d_ref aggregation: mean or median
    max_gap_days: int = 1
    alpha: float = 0.05
    k_range: tuple[int, int] | None = None   # extra rank-curve series per K

    # synth-only knobs
    synth_participants: int = 100
    synth_days: int = 300
    synth_k: int = 4
    synth_mode: str = "iid"
    synth_weight_concentration: float = 5.0
    synth_chain_concentration: float = 1.0
    synth_separation: float = 2.0
    synth_weekend_cluster: int | None = None
    synth_weekend_boost: float = 1.0
    synth_missing_rate: float = 0.0

    def validate(self) -> None:
        if self.seed < 0:
            raise DomainError("seed must be >= 0")
        if self.pin_k is not None and self.pin_k < 1:
            raise DomainError("pin_k must be >= 1")
        if not (1 <= self.k_min <= self.k_max):
            raise DomainError(f"bad sweep range [{self.k_min}, {self.k_max}]")
        for s in self.structures:
            if s not in COV_STRUCTURES:
                raise DomainError(f"unknown covariance structure: {s!r}")
        if not self.structures:
            raise DomainError("at least one covariance structure required")
        if self.n_restarts < 1:
            raise DomainError("n_restarts must be >= 1")
        if not self.segment_days or any(s < 1 for s in self.segment_days):
            raise DomainError("segment_days must be positive")
        if len(set(self.segment_days)) != len(self.segment_days):
            raise DomainError("segment_days must be distinct")
        for m in self.metrics:
            if m not in ("jsd", "cosine"):
                raise DomainError(f"unknown metric: {m!r}")
        if not self.metrics:
            raise DomainError("at least one metric required")
        if self.reference not in ("mean", "median"):
            raise DomainError(f"unknown reference aggregation: {self.reference!r}")
        if self.max_gap_days < 1:
            raise DomainError("max_gap_days must be >= 1")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError("alpha must be in (0, 1)")
        if self.k_range is not None:
            lo, hi = self.k_range
            if not (1 <= lo <= hi):
                raise DomainError(f"bad k_range [{lo}, {hi}]")

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"format": CONFIG_FORMAT, "version": CONFIG_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            doc[f.name] = list(v) if isinstance(v, tuple) else v
        return doc

    def semantic_hash(self) -> str:
        """Short stable digest of result-affecting parameters."""
        doc = self.to_dict()
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    if doc.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        raise SchemaError(f"not a run config document: format={doc.get('format')!r}")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise SchemaError(f"unsupported config version: {doc.get('version')!r}")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known - {"format", "version"})
    if unknown:
        raise SchemaError(f"unknown config field {unknown[0]!r}")
    kwargs: dict[str, Any] = {}
    for f in fields(RunConfig):
        if f.name in doc:
            v = doc[f.name]
            if f.name == "k_range" and v is not None:
                v = (int(v[0]), int(v[1]))
            kwargs[f.name] = v
    config = RunConfig(**kwargs)
    config.validate()
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return config_from_dict(doc)


def override(config: RunConfig, **kwargs: Any) -> RunConfig:
    """Non-None keyword values replace config fields (CLI flags win)."""
    updates = {k: v for k, v in kwargs.items() if v is not None}
    out = replace(config, **updates)
    out.validate()
    return out
