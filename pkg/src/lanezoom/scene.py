"""Synthetic image-space scenes of planted lanes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BezierCurve, GeometryError
from .lp_field import LANE_TYPES, Lane, LaneType


@dataclass(frozen=True)
class Scene:
    image_size: tuple[int, int]
    lanes: tuple[Lane, ...] = ()
    seed: int = 0

    def __post_init__(self):
        w, h = (int(v) for v in self.image_size)
        if w <= 0 or h <= 0:
            raise GeometryError("image size must be positive")
        object.__setattr__(self, "image_size", (w, h))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        for lane in self.lanes:
            pts = lane.curve.points
            if (pts[:, 0].min() < -w or pts[:, 0].max() > 2 * w
                    or pts[:, 1].min() < -h or pts[:, 1].max() > 2 * h):
                raise GeometryError("lane control points leave the 2x image margin")

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "seed": self.seed,
            "lanes": [
                {
                    "control_points": [list(p) for p in lane.curve.control_points],
                    "type": lane.lane_type.value,
                    "gaps": [list(g) for g in lane.gaps],
                }
                for lane in self.lanes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        lanes = tuple(
            Lane(BezierCurve(tuple(map(tuple, item["control_points"]))),
                 LaneType(item.get("type", "WhiteSolid")),
                 tuple(map(tuple, item.get("gaps", []))))
            for item in d.get("lanes", [])
        )
        return cls(tuple(d["image_size"]), lanes, int(d.get("seed", 0)))


def vertical_lane(x_top: float, x_bottom: float, image_size: tuple[int, int],
                  bend: float = 0.0, lane_type: LaneType = LaneType.WhiteSolid,
                  gaps=(), margin: float = 0.0) -> Lane:
    """Cubic lane running top to bottom with ``y`` linear in the parameter.

    Control points are equally spaced in ``y``, so ``x`` is an exact cubic
    in ``y`` and a cubic fit can reproduce the lane.
    """
    _, h = image_size
    ys = np.linspace(-margin, h + margin, 4)
    xs = np.linspace(x_top, x_bottom, 4) + np.array([0.0, bend, bend, 0.0])
    return Lane(BezierCurve(tuple(zip(xs.tolist(), ys.tolist()))), lane_type, tuple(gaps))


def gap_interval(lane_length_px: float, center: float, gap_px: float) -> tuple[float, float]:
    half = 0.5 * gap_px / lane_length_px
    return (center - half, center + half)


def double_line_scene(separation: float = 20.0, image_size=(2048, 1536), x: float = 900.0,
                      seed: int = 0) -> Scene:
    """Two parallel straight lanes ``separation`` pixels apart."""
    a = vertical_lane(x, x, image_size, lane_type=LaneType.YellowSolid)
    b = vertical_lane(x + separation, x + separation, image_size, lane_type=LaneType.YellowSolid)
    return Scene(image_size, (a, b), seed)


def dashed_gap_scene(gap_px: float = 200.0, separation: float = 20.0,
                     image_size=(2048, 1536), x: float = 900.0, seed: int = 0) -> Scene:
    """A dashed lane with one long gap, running beside a solid partner line.

    The partner keeps the area unconfident at coarse zoom so the gap is only
    seen again by high-zoom crops whose field of view is smaller than the gap.
    """
    h = image_size[1]
    dashed = vertical_lane(x, x, image_size, lane_type=LaneType.WhiteDash,
                           gaps=(gap_interval(h, 0.5, gap_px),))
    solid = vertical_lane(x + separation, x + separation, image_size)
    return Scene(image_size, (dashed, solid), seed)


def random_scene(seed: int, image_size=(2048, 1536), n_groups: tuple[int, int] = (2, 4),
                 p_double: float = 0.5, p_gap: float = 0.5,
                 separation: tuple[float, float] = (16.0, 30.0),
                 gap_px: tuple[float, float] = (150.0, 260.0)) -> Scene:
    """Random near-vertical lanes, some doubled, some with a long gap.

    Lane groups are spaced at least 200 px apart so that only the planted
    double lines need zooming.
    """
    rng = np.random.default_rng(seed)
    w, h = image_size
    count = int(rng.integers(n_groups[0], n_groups[1] + 1))
    slots = np.linspace(0.12 * w, 0.88 * w, count)
    jitter = min(40.0, 0.25 * (slots[1] - slots[0])) if count > 1 else 40.0
    base_types = [t for t in LANE_TYPES if t is not LaneType.OcclusionOrGap]
    lanes = []
    for x0 in slots:
        x_top = float(x0 + rng.uniform(-jitter, jitter))
        drift = float(rng.uniform(-60.0, 60.0))
        bend = float(rng.uniform(-30.0, 30.0))
        lane_type = base_types[int(rng.integers(len(base_types)))]
        gaps = ()
        if rng.random() < p_gap:
            gaps = (gap_interval(h, float(rng.uniform(0.35, 0.65)), float(rng.uniform(*gap_px))),)
        lanes.append(vertical_lane(x_top, x_top + drift, image_size, bend, lane_type, gaps))
        if rng.random() < p_double:
            sep = float(rng.uniform(*separation))
            partner_type = base_types[int(rng.integers(len(base_types)))]
            lanes.append(vertical_lane(x_top + sep, x_top + drift + sep, image_size, bend, partner_type))
    return Scene(image_size, tuple(lanes), seed)


@dataclass(frozen=True)
class NoiseModel:
    """Detector imperfection. Sigmas are in apparent pixels / radians."""

    position_sigma: float = 1.0
    direction_sigma: float = 0.01
    mask_flip_rate: float = 0.01
    confidence_flip_rate: float = 0.01
    type_confusion_rate: float = 0.01

    def __post_init__(self):
        if self.position_sigma < 0 or self.direction_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        for rate in (self.mask_flip_rate, self.confidence_flip_rate, self.type_confusion_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("noise rates must lie in [0, 1]")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def is_zero(self) -> bool:
        return (self.position_sigma == 0 and self.direction_sigma == 0 and self.mask_flip_rate == 0
                and self.confidence_flip_rate == 0 and self.type_confusion_rate == 0)


@dataclass(frozen=True)
class FovRule:
    """When a detector may recognise a gap.

    A gap piece is recognised iff the crop's field of view (shorter side, in
    full-image pixels) exceeds the gap's arc length, or, with
    ``inherit_from_context``, some supplied thumbnail field did so and covers
    the gap. Unrecognised gap cells report ``mask=0``.
    """

    enabled: bool = True
    inherit_from_context: bool = True

