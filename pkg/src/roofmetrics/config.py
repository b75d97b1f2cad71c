"""Pipeline configuration with defaults for the published evaluation settings."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import List

from .errors import ConfigError
from .geometry import BoundingRegion
from .metrics import LocalModelOptions
from .registration import IcpOptions

DEFAULT_DENSITY = 40_000.0  # points per m^2 when sampling meshes
DEFAULT_MIN_DISTANCE = 0.005  # m
DEFAULT_NEIGHBOR_RADIUS = 0.10  # m
DEFAULT_HEADLINE_THRESHOLD = 0.04  # m


def default_thresholds() -> List[float]:
    """0 to 6 cm in 0.5 cm steps, in metres."""
    return [round(0.005 * i, 10) for i in range(13)]


@dataclass(frozen=True)
class Section:
    name: str
    region: BoundingRegion


@dataclass
class PipelineConfig:
    density: float = DEFAULT_DENSITY
    subsample_min_distance: float = DEFAULT_MIN_DISTANCE
    subsample_reference: bool = True
    icp: IcpOptions = field(default_factory=IcpOptions)
    local_model: LocalModelOptions = field(default_factory=lambda: LocalModelOptions(DEFAULT_NEIGHBOR_RADIUS))
    thresholds: List[float] = field(default_factory=default_thresholds)
    headline_threshold: float = DEFAULT_HEADLINE_THRESHOLD
    sections: List[Section] = field(default_factory=list)
    seed: int = 0
    ply_precision: str = "float"

    def __post_init__(self):
        if not self.density > 0:
            raise ConfigError("density must be positive")
        if not self.subsample_min_distance > 0:
            raise ConfigError("subsample_min_distance must be positive")
        if not self.thresholds:
            raise ConfigError("thresholds must not be empty")
        if any(b < a for a, b in zip(self.thresholds, self.thresholds[1:])) or min(self.thresholds) < 0:
            raise ConfigError("thresholds must be non-negative and ascending")
        if self.ply_precision not in ("float", "double"):
            raise ConfigError("ply_precision must be 'float' or 'double'")
        names = [s.name for s in self.sections]
        if len(set(names)) != len(names):
            raise ConfigError("section names must be unique")

    def to_dict(self) -> dict:
        return {
            "density": self.density,
            "subsample_min_distance": self.subsample_min_distance,
            "subsample_reference": self.subsample_reference,
            "icp": asdict(self.icp),
            "local_model": asdict(self.local_model),
            "thresholds": list(self.thresholds),
            "headline_threshold": self.headline_threshold,
            "sections": [{"name": s.name, **s.region.to_dict()} for s in self.sections],
            "seed": self.seed,
            "ply_precision": self.ply_precision,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = dict(d)
        try:
            if "icp" in kw:
                kw["icp"] = IcpOptions(**kw["icp"])
            if "local_model" in kw:
                kw["local_model"] = LocalModelOptions(**kw["local_model"])
            if "sections" in kw:
                secs = []
                for s in kw["sections"]:
                    s = dict(s)
                    secs.append(Section(s.pop("name"), BoundingRegion.from_dict(s)))
                kw["sections"] = secs
            if "thresholds" in kw:
                kw["thresholds"] = [float(t) for t in kw["thresholds"]]
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
