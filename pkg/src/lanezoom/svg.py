"""SVG rendering of scenes, pipeline runs and lane maps.

Lane types use a fixed palette (``PALETTE``). Uncertain regions from a
pipeline run are drawn as translucent rectangles, one per region.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fitting import DetectedLane
from .geometry import discretize
from .hdmap import GroundTruthMap
from .lp_field import Lane, LaneType
from .scene import Scene
from .zoom import PipelineResult

PALETTE: dict[LaneType, str] = {
    LaneType.WhiteSolid: "#1f77b4",
    LaneType.WhiteDash: "#17becf",
    LaneType.YellowSolid: "#ff7f0e",
    LaneType.YellowDash: "#bcbd22",
    LaneType.RoadBoundary: "#2ca02c",
    LaneType.Other: "#7f7f7f",
    LaneType.OcclusionOrGap: "#d62728",
}

REGION_FILL = "#9467bd"


@dataclass(frozen=True)
class Style:
    stroke_width: float = 3.0
    point_radius: float = 1.5
    region_opacity: float = 0.25
    margin: float = 10.0
    world_scale: float = 10.0     # SVG units per metre for world-space maps
    curve_step: float = 2.0


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _root(width: float, height: float, style: Style) -> ET.Element:
    m = style.margin
    root = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": _fmt(width + 2 * m), "height": _fmt(height + 2 * m),
        "viewBox": f"{_fmt(-m)} {_fmt(-m)} {_fmt(width + 2 * m)} {_fmt(height + 2 * m)}",
    })
    ET.SubElement(root, "rect", {"class": "frame", "x": "0", "y": "0", "width": _fmt(width),
                                 "height": _fmt(height), "fill": "none", "stroke": "#000000"})
    return root


def _polyline(parent: ET.Element, pts: np.ndarray, lane_type: LaneType, style: Style,
              cls: str = "lane") -> None:
    ET.SubElement(parent, "polyline", {
        "class": cls, "data-type": lane_type.value,
        "points": " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts),
        "fill": "none", "stroke": PALETTE[lane_type], "stroke-width": _fmt(style.stroke_width),
    })


def _curve_points(item, step: float) -> tuple[np.ndarray, LaneType]:
    if isinstance(item, Lane):
        return discretize(item.curve, step).vertices, item.lane_type
    if isinstance(item, DetectedLane):
        return discretize(item.curve, step).vertices, item.lane_type
    return item.polyline.vertices, item.lane_type


def _tostring(root: ET.Element) -> str:
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def scene_svg(scene: Scene, lanes: Sequence[DetectedLane] = (), style: Style | None = None) -> str:
    """Ground-truth lanes of ``scene``, with optional detected lanes on top."""
    style = style or Style()
    w, h = scene.image_size
    root = _root(w, h, style)
    for lane in scene.lanes:
        pts, t = _curve_points(lane, style.curve_step)
        _polyline(root, pts, t, style, "gt")
    for lane in lanes:
        pts, t = _curve_points(lane, style.curve_step)
        _polyline(root, pts, t, style, "lane")
    return _tostring(root)


def pipeline_svg(result: PipelineResult, lanes: Sequence[DetectedLane] = (),
                 style: Style | None = None) -> str:
    """Decoded points, every stage's uncertain regions and fitted lanes."""
    style = style or Style()
    w, h = result.image_size
    root = _root(w, h, style)
    regions = ET.SubElement(root, "g", {"class": "uncertain"})
    for st in result.stage_stats:
        for r in st.regions:
            ET.SubElement(regions, "rect", {
                "class": "region", "data-stage": str(st.stage),
                "x": _fmt(r.x0), "y": _fmt(r.y0), "width": _fmt(r.width), "height": _fmt(r.height),
                "fill": REGION_FILL, "fill-opacity": _fmt(style.region_opacity), "stroke": "none",
            })
    dots = ET.SubElement(root, "g", {"class": "points"})
    for p in result.points:
        ET.SubElement(dots, "circle", {"cx": _fmt(p.x), "cy": _fmt(p.y),
                                       "r": _fmt(style.point_radius / max(p.z, 1.0) + 0.5),
                                       "fill": PALETTE[p.lane_type]})
    for lane in lanes:
        pts, t = _curve_points(lane, style.curve_step)
        _polyline(root, pts, t, style, "lane")
    return _tostring(root)


def map_svg(lanes: Sequence[DetectedLane] = (), gt: GroundTruthMap | None = None,
            style: Style | None = None) -> str:
    """World-space lanes (metres) seen from above, north up."""
    style = style or Style()
    items = [("gt", _curve_points(l, 0.5)) for l in (gt.lanes if gt else [])]
    items += [("lane", _curve_points(l, 0.5)) for l in lanes]
    if items:
        allp = np.vstack([pts for _, (pts, _) in items])
        lo, hi = allp.min(axis=0), allp.max(axis=0)
    else:
        lo = hi = np.zeros(2)
    s = style.world_scale
    width, height = max((hi[0] - lo[0]) * s, 1.0), max((hi[1] - lo[1]) * s, 1.0)
    root = _root(width, height, style)
    for cls, (pts, t) in items:
        xy = np.column_stack([(pts[:, 0] - lo[0]) * s, (hi[1] - pts[:, 1]) * s])
        _polyline(root, xy, t, style, cls)
    return _tostring(root)

