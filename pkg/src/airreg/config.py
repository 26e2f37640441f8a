"""Run configuration, loaded from JSON with the same key names as the dataclasses."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .decision import DecisionPolicy
from .losses import LossConfig
from .volume import DataError

MODES = ("air", "baseline-no-opt", "always-opt")


@dataclass(frozen=True)
class InnerConfig:
    n_steps: int = 15
    lr: float = 0.1

    def __post_init__(self):
        if self.n_steps < 1 or not self.lr > 0:
            raise DataError("inner.n_steps must be >= 1 and inner.lr positive")


@dataclass(frozen=True)
class OuterConfig:
    epochs: int = 500
    lr_outer: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or not self.lr_outer > 0:
            raise DataError("outer.epochs must be >= 0 and outer.lr_outer positive")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "control-grid"
    control_dims: tuple[int, int, int] = (4, 4, 4)
    update: str = "straight-through"


@dataclass(frozen=True)
class AirConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    inner: InnerConfig = field(default_factory=InnerConfig)
    decision: DecisionPolicy = field(default_factory=DecisionPolicy)
    outer: OuterConfig = field(default_factory=OuterConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    corpus: str | None = None
    mode: str = "air"

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["backbone"]["control_dims"] = list(self.backbone.control_dims)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "AirConfig":
        sections = {"loss": LossConfig, "inner": InnerConfig, "decision": DecisionPolicy,
                    "outer": OuterConfig, "backbone": BackboneConfig}
        unknown = set(d) - set(sections) - {"corpus", "mode"}
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, klass in sections.items():
            sub = dict(d.get(name) or {})
            allowed = {f.name for f in fields(klass)}
            bad = set(sub) - allowed
            if bad:
                raise DataError(f"unknown keys in {name!r}: {sorted(bad)}")
            if "control_dims" in sub:
                sub["control_dims"] = tuple(sub["control_dims"])
            try:
                kw[name] = klass(**sub)
            except TypeError as exc:
                raise DataError(f"bad {name!r} section: {exc}") from exc
        return cls(corpus=d.get("corpus"), mode=d.get("mode", "air"), **kw)

    def override(self, **dotted) -> "AirConfig":
        """Replace values by dotted key, e.g. ``override(**{"outer.epochs": 3})``."""
        cfg = self
        for key, value in dotted.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
            else:
                cfg = replace(cfg, **{key: value})
        return cfg


def load_config(path) -> AirConfig:
    try:
        return AirConfig.from_json(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
