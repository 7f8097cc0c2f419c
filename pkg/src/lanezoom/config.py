"""Pipeline configuration with strict (unknown-key rejecting) JSON loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Any

from .clustering import ClusterParams
from .fitting import FitParams
from .lp_field import FieldConfig
from .scene import FovRule, NoiseModel
from .zoom import Thresholds, ZoomSchedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MetricParams:
    pixel_thickness: float = 40.0
    iou_width: float = 30.0
    iou_threshold: float = 0.5
    dis_thresh: float = 40.0
    area_thresh_factor: float = 1.0
    check_type: bool = False

    def __post_init__(self):
        if self.pixel_thickness <= 0 or self.iou_width <= 0 or self.dis_thresh <= 0:
            raise ValueError("metric widths and thresholds must be positive")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.area_thresh_factor <= 0:
            raise ValueError("area_thresh_factor must be positive")


@dataclass(frozen=True)
class MapParams:
    eps: float = 50.0
    min_pts: int = 3
    image_step: float = 1.0
    world_step: float = 0.25
    hdis_step: float = 10.0
    max_range: float = 60.0
    dis_thresh: float = 2.0       # metres, for map_error matching

    def __post_init__(self):
        ClusterParams(self.eps, self.min_pts)
        for name in ("image_step", "world_step", "hdis_step", "max_range", "dis_thresh"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    field: FieldConfig = FieldConfig()
    schedule: ZoomSchedule = ZoomSchedule()
    thresholds: Thresholds = Thresholds()
    cluster: ClusterParams = ClusterParams()
    fit: FitParams = FitParams()
    metrics: MetricParams = MetricParams()
    noise: NoiseModel = NoiseModel()
    fov_rule: FovRule = FovRule()
    map: MapParams = MapParams()
    use_context: bool = True
    supersede: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _build(cls, d, "config")

    def merged(self, overrides: dict) -> "PipelineConfig":
        """New config with ``overrides`` (same nested layout) applied on top."""
        base = self.to_dict()
        _deep_update(base, overrides, "config")
        return PipelineConfig.from_dict(base)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in d.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}"
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true/false")
            kwargs[name] = value
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(value)
        elif isinstance(current, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number")
            if type(current) is int:
                if float(value) != int(value):
                    raise ConfigError(f"{path}: expected an integer")
                value = int(value)
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _deep_update(base: dict, overrides: dict, where: str) -> None:
    for key, value in overrides.items():
        if key not in base:
            raise ConfigError(f"{where}: unknown key {key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key}: expected an object")
            _deep_update(base[key], value, f"{where}.{key}")
        else:
            base[key] = value
