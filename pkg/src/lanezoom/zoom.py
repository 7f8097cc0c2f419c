"""Confidence-driven zooming over a schedule of zoom ratios.

Stage 0 tiles the whole image at the coarsest ratio (the thumbnail stage).
Each later stage only looks at crops covering the regions the previous
stage was unsure about, so the cost per image stays bounded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import Detector
from .geometry import Rect
from .lp_field import LANE_TYPES, CropSpec, DecodedPoint, LPField, decode_arrays, uncertain_regions

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass(frozen=True)
class ZoomSchedule:
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    crop_size: float = 512.0
    max_crops_per_stage: int = 64

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.ratios)
        if not ratios or any(r <= 0 for r in ratios):
            raise ValueError("zoom ratios must be positive")
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("zoom ratios must be strictly increasing")
        if self.crop_size <= 0 or self.max_crops_per_stage < 1:
            raise ValueError("crop_size and max_crops_per_stage must be positive")
        object.__setattr__(self, "ratios", ratios)

    def fov(self, ratio: float) -> float:
        """Full-image pixels covered by one crop at ``ratio``."""
        return self.crop_size / ratio


@dataclass(frozen=True)
class Thresholds:
    conf: float = 0.5
    mask: float = 0.5
    min_region_cells: int = 2   # smaller uncertain components are not refined

    def __post_init__(self):
        if int(self.min_region_cells) < 1:
            raise ValueError("min_region_cells must be at least 1")


@dataclass
class StageStats:
    stage: int
    zoom_ratio: float
    crops: int = 0
    confident_cells: int = 0
    uncertain_regions: int = 0
    uncertain_area: float = 0.0
    failures: int = 0
    regions: list[Rect] = field(default_factory=list)
    crop_rects: list[Rect] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "zoom_ratio": self.zoom_ratio, "crops": self.crops,
            "confident_cells": self.confident_cells, "uncertain_regions": self.uncertain_regions,
            "uncertain_area": self.uncertain_area, "failures": self.failures,
            "regions": [[r.x0, r.y0, r.x1, r.y1] for r in self.regions],
            "crop_rects": [[r.x0, r.y0, r.x1, r.y1] for r in self.crop_rects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageStats":
        return cls(
            stage=int(d["stage"]), zoom_ratio=float(d["zoom_ratio"]), crops=int(d["crops"]),
            confident_cells=int(d["confident_cells"]),
            uncertain_regions=int(d["uncertain_regions"]),
            uncertain_area=float(d["uncertain_area"]), failures=int(d.get("failures", 0)),
            regions=[Rect(*r) for r in d.get("regions", [])],
            crop_rects=[Rect(*r) for r in d.get("crop_rects", [])],
        )


@dataclass
class PipelineResult:
    points: list[DecodedPoint]
    stage_stats: list[StageStats]
    image_size: tuple[int, int]
    schedule: ZoomSchedule
    failed_crops: list[tuple[int, CropSpec, str]] = field(default_factory=list)

    @property
    def stopped_after(self) -> int:
        return len(self.stage_stats) - 1


def _tile_starts(lo: float, extent: float, fov: float) -> list[float]:
    """Abutting tiles of width ``fov`` centred on ``[lo, lo + extent]``."""
    count = max(int(math.ceil(extent / fov - 1e-9)), 1)
    start = lo + 0.5 * (extent - count * fov)
    return [start + k * fov for k in range(count)]


def initial_crops(image_size: tuple[int, int], schedule: ZoomSchedule) -> list[CropSpec]:
    """Tile the full image at the first ratio with abutting crops.

    Tiles start at the image origin; the last row/column may hang past the
    image edge, which keeps overlap at zero.
    """
    w, h = image_size
    ratio = schedule.ratios[0]
    fov = schedule.fov(ratio)
    nx = max(int(math.ceil(w / fov - 1e-9)), 1)
    ny = max(int(math.ceil(h / fov - 1e-9)), 1)
    return [CropSpec((i * fov, j * fov), fov, fov, ratio) for j in range(ny) for i in range(nx)]


def next_stage_crops(regions: Sequence[Rect], ratio_next: float,
                     schedule: ZoomSchedule) -> list[CropSpec]:
    """Crops at ``ratio_next`` covering every region, largest regions first.

    A region that fits in one crop gets a single crop centred on it; larger
    regions get a centred grid of abutting crops. Duplicate crops are dropped
    and the total is capped at ``schedule.max_crops_per_stage``.
    """
    if ratio_next not in schedule.ratios:
        raise ValueError(f"ratio {ratio_next} is not in the schedule")
    fov = schedule.fov(ratio_next)
    ordered = sorted(regions, key=lambda r: (-r.area, r.y0, r.x0, r.y1, r.x1))
    seen: set[tuple[float, float]] = set()
    crops: list[CropSpec] = []
    for rect in ordered:
        for y in _tile_starts(rect.y0, rect.height, fov):
            for x in _tile_starts(rect.x0, rect.width, fov):
                key = (round(x, 6), round(y, 6))
                if key in seen:
                    continue
                if len(crops) >= schedule.max_crops_per_stage:
                    return crops
                seen.add(key)
                crops.append(CropSpec((x, y), fov, fov, ratio_next))
    return crops


def _merge_contained(rects: list[Rect]) -> list[Rect]:
    """Drop rectangles fully contained in another one (overlapping crops)."""
    rects = sorted(set(rects), key=lambda r: (-r.area, r.y0, r.x0, r.y1, r.x1))
    kept: list[Rect] = []
    for r in rects:
        if not any(k.contains(r) for k in kept):
            kept.append(r)
    return kept


def run(detector: Detector, image_size: tuple[int, int], schedule: ZoomSchedule | None = None,
        thresholds: Thresholds | None = None, use_context: bool = True,
        supersede: bool = True) -> PipelineResult:
    """Run the detector stage by stage and collect confident points.

    Decoded points outside the image are discarded. With ``supersede``, points
    from coarser stages that fall inside a crop of a finer stage are replaced
    by that stage's output. Points are returned in canonical ``(y, x, z)``
    order so results do not depend on crop order.
    """
    schedule = schedule or ZoomSchedule()
    thr = thresholds or Thresholds()
    w, h = image_size
    xy_parts, z_parts, type_parts, dir_parts = [], [], [], []
    stats: list[StageStats] = []
    failed: list[tuple[int, CropSpec, str]] = []
    thumbnails: list[LPField] = []
    crops = initial_crops(image_size, schedule)

    for stage, ratio in enumerate(schedule.ratios):
        st = StageStats(stage, ratio, crops=len(crops), crop_rects=[c.rect for c in crops])
        next_fov = schedule.fov(schedule.ratios[stage + 1]) if stage + 1 < len(schedule.ratios) else None
        regions: list[Rect] = []
        context = thumbnails if (use_context and stage > 0) else None
        for crop in crops:
            try:
                fld = detector.detect(crop, context)
            except Exception as exc:  # one bad crop must not abort the image
                log.warning("detector failed on %s: %s", crop, exc)
                failed.append((stage, crop, repr(exc)))
                st.failures += 1
                continue
            if stage == 0:
                thumbnails.append(fld)
            xy, types, dirs = decode_arrays(fld, thr.conf, thr.mask)
            keep = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
            xy_parts.append(xy[keep])
            type_parts.append(types[keep])
            dir_parts.append(dirs[keep])
            z_parts.append(np.full(int(keep.sum()), ratio))
            st.confident_cells += int(keep.sum())
            regions.extend(uncertain_regions(fld, thr.mask, thr.conf, next_fov,
                                              thr.min_region_cells))
        if supersede and stage > 0 and xy_parts:
            _drop_covered(xy_parts, z_parts, type_parts, dir_parts, crops, ratio)
        regions = _merge_contained(regions)
        st.regions = regions
        st.uncertain_regions = len(regions)
        st.uncertain_area = float(sum(r.area for r in regions))
        stats.append(st)
        log.debug("stage %d (z=%g): %d crops, %d points, %d regions",
                  stage, ratio, st.crops, st.confident_cells, st.uncertain_regions)
        if not regions or next_fov is None:
            break
        crops = next_stage_crops(regions, schedule.ratios[stage + 1], schedule)

    points = _canonical_points(xy_parts, z_parts, type_parts, dir_parts)
    return PipelineResult(points, stats, (w, h), schedule, failed)


def _drop_covered(xy_parts, z_parts, type_parts, dir_parts, crops, ratio) -> None:
    boxes = np.array([[c.origin[0], c.origin[1], c.origin[0] + c.width, c.origin[1] + c.height]
                      for c in crops])
    for k, (xy, z) in enumerate(zip(xy_parts, z_parts)):
        if len(xy) == 0 or z[0] >= ratio:
            continue
        inside = ((xy[:, None, 0] >= boxes[None, :, 0]) & (xy[:, None, 0] < boxes[None, :, 2])
                  & (xy[:, None, 1] >= boxes[None, :, 1]) & (xy[:, None, 1] < boxes[None, :, 3]))
        keep = ~inside.any(axis=1)
        xy_parts[k] = xy[keep]
        z_parts[k] = z[keep]
        type_parts[k] = type_parts[k][keep]
        dir_parts[k] = dir_parts[k][keep]


def _canonical_points(xy_parts, z_parts, type_parts, dir_parts) -> list[DecodedPoint]:
    if not xy_parts:
        return []
    xy = np.concatenate(xy_parts) if xy_parts else np.zeros((0, 2))
    if len(xy) == 0:
        return []
    z = np.concatenate(z_parts)
    types = np.concatenate(type_parts)
    dirs = np.concatenate(dir_parts)
    order = np.lexsort((types, dirs[:, 1], dirs[:, 0], z, xy[:, 0], xy[:, 1]))
    return [
        DecodedPoint(float(xy[i, 0]), float(xy[i, 1]), float(z[i]), LANE_TYPES[int(types[i])],
                     (float(dirs[i, 0]), float(dirs[i, 1])))
        for i in order
    ]
