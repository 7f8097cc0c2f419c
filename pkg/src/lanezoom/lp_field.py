"""Six-branch line-prediction fields: ground-truth rendering and decoding.

A field covers one crop of the full image at one zoom ratio. Anchors sit on
a regular grid in crop-local *apparent* pixels (full-image pixels times the
zoom ratio); every distance threshold below is expressed in apparent pixels
so that zooming in separates close lines.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import BezierCurve, GeometryError, Rect, closest_on_bezier


class LaneType(enum.Enum):
    WhiteSolid = "WhiteSolid"
    WhiteDash = "WhiteDash"
    YellowSolid = "YellowSolid"
    YellowDash = "YellowDash"
    RoadBoundary = "RoadBoundary"
    Other = "Other"
    OcclusionOrGap = "OcclusionOrGap"

    @property
    def index(self) -> int:
        return LANE_TYPES.index(self)


LANE_TYPES: tuple[LaneType, ...] = tuple(LaneType)
N_TYPES = len(LANE_TYPES)


@dataclass(frozen=True)
class Lane:
    """A ground-truth lane marking.

    ``gaps`` are parameter intervals of ``curve`` where the paint is missing
    (dash gaps or occlusions). They are still part of the lane and render as
    ``OcclusionOrGap`` when occlusion modelling is on.
    """

    curve: BezierCurve
    lane_type: LaneType = LaneType.WhiteSolid
    gaps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        gaps = tuple(sorted((float(a), float(b)) for a, b in self.gaps))
        for a, b in gaps:
            if not 0.0 <= a < b <= 1.0:
                raise GeometryError(f"gap interval ({a}, {b}) not inside [0, 1]")
        for (_, b0), (a1, _) in zip(gaps, gaps[1:]):
            if a1 < b0:
                raise GeometryError("gap intervals overlap")
        if self.lane_type is LaneType.OcclusionOrGap:
            raise GeometryError("OcclusionOrGap is reserved for gap pieces")
        object.__setattr__(self, "gaps", gaps)

    def pieces(self, model_occlusion: bool = True) -> list[tuple[float, float, LaneType, bool]]:
        """``(t0, t1, type, is_gap)`` pieces in parameter order."""
        out = []
        t = 0.0
        for a, b in self.gaps:
            if a > t:
                out.append((t, a, self.lane_type, False))
            if model_occlusion:
                out.append((a, b, LaneType.OcclusionOrGap, True))
            t = b
        if t < 1.0:
            out.append((t, 1.0, self.lane_type, False))
        return out


@dataclass(frozen=True)
class CropSpec:
    """A crop of the full image.

    ``width``/``height`` are the field of view in full-image pixels; the
    detector sees ``width * zoom_ratio`` apparent pixels.
    """

    origin: tuple[float, float]
    width: float
    height: float
    zoom_ratio: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise GeometryError("crop width and height must be positive")
        if not self.zoom_ratio > 0:
            raise GeometryError("zoom_ratio must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def rect(self) -> Rect:
        x, y = self.origin
        return Rect(x, y, x + self.width, y + self.height)

    @property
    def fov(self) -> float:
        return min(self.width, self.height)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "width": self.width, "height": self.height,
                "zoom_ratio": self.zoom_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "CropSpec":
        return cls(tuple(d["origin"]), d["width"], d["height"], d["zoom_ratio"])


@dataclass(frozen=True)
class FieldConfig:
    stride: float = 8.0
    stroke_width: float = 32.0
    confidence_separation: float = 46.0
    distance_cap_factor: float = 2.0
    model_occlusion: bool = True

    def __post_init__(self):
        if self.stride <= 0 or self.stroke_width <= 0 or self.confidence_separation <= 0:
            raise ValueError("stride, stroke_width and confidence_separation must be positive")
        if self.distance_cap_factor <= 0:
            raise ValueError("distance_cap_factor must be positive")

    @property
    def distance_cap(self) -> float:
        return self.distance_cap_factor * self.stroke_width


@dataclass(frozen=True)
class LPCell:
    anchor: tuple[float, float]
    mask: float
    type_scores: tuple[float, ...]
    position: tuple[float, float]
    direction: tuple[float, float]
    confidence: float
    distance: float


def grid_shape(crop: CropSpec, stride: float) -> tuple[int, int]:
    rows = max(int(math.ceil(crop.height * crop.zoom_ratio / stride - 1e-9)), 1)
    cols = max(int(math.ceil(crop.width * crop.zoom_ratio / stride - 1e-9)), 1)
    return rows, cols


@dataclass(frozen=True, eq=False)
class LPField:
    """Dense per-anchor branch values, stored as read-only arrays.

    ``position`` and ``distance`` are in crop-local apparent pixels.
    """

    crop: CropSpec
    stride: float
    mask: np.ndarray
    type_scores: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    confidence: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        rows, cols = grid_shape(self.crop, self.stride)
        shapes = {
            "mask": (rows, cols), "confidence": (rows, cols), "distance": (rows, cols),
            "type_scores": (rows, cols, N_TYPES), "position": (rows, cols, 2),
            "direction": (rows, cols, 2),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def zoom_ratio(self) -> float:
        return self.crop.zoom_ratio

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def anchors(self) -> np.ndarray:
        """Crop-local anchor coordinates, shape ``(rows, cols, 2)``."""
        rows, cols = self.shape
        xs = (np.arange(cols) + 0.5) * self.stride
        ys = (np.arange(rows) + 0.5) * self.stride
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def to_image(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(self.crop.origin) + np.asarray(local) / self.crop.zoom_ratio

    def cell(self, row: int, col: int) -> LPCell:
        a = self.anchors()[row, col]
        return LPCell(
            anchor=(float(a[0]), float(a[1])),
            mask=float(self.mask[row, col]),
            type_scores=tuple(float(v) for v in self.type_scores[row, col]),
            position=tuple(float(v) for v in self.position[row, col]),
            direction=tuple(float(v) for v in self.direction[row, col]),
            confidence=float(self.confidence[row, col]),
            distance=float(self.distance[row, col]),
        )

    def argmax_types(self) -> np.ndarray:
        return np.argmax(self.type_scores, axis=-1)

    def to_dict(self) -> dict:
        rows, cols = self.shape
        return {
            "rows": rows,
            "cols": cols,
            "stride": self.stride,
            "crop": self.crop.to_dict(),
            "zoom_ratio": self.zoom_ratio,
            "mask": self.mask.ravel().tolist(),
            "type_scores": self.type_scores.ravel().tolist(),
            "position": self.position.ravel().tolist(),
            "direction": self.direction.ravel().tolist(),
            "confidence": self.confidence.ravel().tolist(),
            "distance": self.distance.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LPField":
        rows, cols = int(d["rows"]), int(d["cols"])
        crop = CropSpec.from_dict(d["crop"])

        def arr(name, *tail):
            return np.asarray(d[name], dtype=float).reshape((rows, cols) + tail)

        return cls(
            crop=crop, stride=float(d["stride"]),
            mask=arr("mask"), type_scores=arr("type_scores", N_TYPES),
            position=arr("position", 2), direction=arr("direction", 2),
            confidence=arr("confidence"), distance=arr("distance"),
        )

    def equals(self, other: "LPField") -> bool:
        """Bit-exact comparison of every branch."""
        if self.crop != other.crop or self.stride != other.stride:
            return False
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("mask", "type_scores", "position", "direction", "confidence", "distance")
        )


class DecodedPoint(NamedTuple):
    x: float
    y: float
    z: float
    lane_type: LaneType
    direction: tuple[float, float]


# -- ground-truth rendering -------------------------------------------------

_SAMPLE_SPACING = 1.0


class _PieceIndex:
    """Dense samples and a KD-tree over one parameter interval of a curve."""

    def __init__(self, curve: BezierCurve, t0: float, t1: float):
        self.curve = curve
        self.t0, self.t1 = t0, t1
        approx = float(np.linalg.norm(np.diff(curve.points, axis=0), axis=1).sum()) * (t1 - t0)
        n = max(int(math.ceil(approx / _SAMPLE_SPACING)), 1)
        self.ts = np.linspace(t0, t1, n + 1)
        self.tree = cKDTree(curve.evaluate(self.ts))

    def closest(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        _, idx = self.tree.query(points)
        t, q = closest_on_bezier(self.curve, points, self.ts[idx], self.t0, self.t1)
        return np.linalg.norm(q - points, axis=1), q, t


@lru_cache(maxsize=256)
def _lane_index(lane: Lane, model_occlusion: bool):
    return [
        (_PieceIndex(lane.curve, t0, t1), ptype, is_gap)
        for t0, t1, ptype, is_gap in lane.pieces(model_occlusion)
    ]


@lru_cache(maxsize=256)
def _derivative(curve: BezierCurve) -> BezierCurve:
    return curve.derivative()


def _unit_tangent(curve: BezierCurve, t: np.ndarray) -> np.ndarray:
    """Unit tangent at ``t``; at a cusp the second derivative gives the limit direction."""
    d1 = _derivative(curve)
    tangent = d1.evaluate(t)
    norm = np.linalg.norm(tangent, axis=1)
    flat = norm <= 1e-12
    if np.any(flat):
        alt = _derivative(d1).evaluate(t[flat]) if curve.degree > 1 else np.zeros((flat.sum(), 2))
        alt_norm = np.linalg.norm(alt, axis=1)
        chord = curve.points[-1] - curve.points[0]
        if np.linalg.norm(chord) <= 1e-12:
            chord = np.array([1.0, 0.0])
        alt[alt_norm <= 1e-12] = chord
        tangent[flat], norm[flat] = alt, np.linalg.norm(alt, axis=1)
    return tangent / norm[:, None]


class _Nearest(NamedTuple):
    dist: np.ndarray      # (N,) full-image pixels
    point: np.ndarray     # (N, 2)
    t: np.ndarray         # (N,)
    piece: np.ndarray     # (N,) piece index within the lane


def _nearest_on_lane(lane: Lane, points: np.ndarray, model_occlusion: bool) -> _Nearest:
    best = None
    for k, (index, _, _) in enumerate(_lane_index(lane, model_occlusion)):
        d, q, t = index.closest(points)
        if best is None:
            best = _Nearest(d, q, t, np.zeros(len(points), dtype=int))
            continue
        better = d < best.dist
        best = _Nearest(
            np.where(better, d, best.dist),
            np.where(better[:, None], q, best.point),
            np.where(better, t, best.t),
            np.where(better, k, best.piece),
        )
    return best


class RenderAux(NamedTuple):
    """Per-cell bookkeeping the detector needs beyond the field itself."""

    lane: np.ndarray      # nearest lane index, -1 when there are no lanes
    piece: np.ndarray     # piece index within that lane
    inside: np.ndarray    # anchor lies inside the image


def _render(lanes: Sequence[Lane], crop: CropSpec, config: FieldConfig,
            image_size: tuple[int, int] | None = None) -> tuple[LPField, RenderAux]:
    rows, cols = grid_shape(crop, config.stride)
    z = crop.zoom_ratio
    n = rows * cols
    xs = (np.arange(cols) + 0.5) * config.stride
    ys = (np.arange(rows) + 0.5) * config.stride
    gx, gy = np.meshgrid(xs, ys)
    local = np.stack([gx.ravel(), gy.ravel()], axis=1)
    full = np.asarray(crop.origin) + local / z
    cap = config.distance_cap

    if image_size is not None:
        w, h = image_size
        inside = (full[:, 0] >= 0) & (full[:, 0] < w) & (full[:, 1] >= 0) & (full[:, 1] < h)
    else:
        inside = np.ones(n, dtype=bool)

    if not lanes:
        field_ = LPField(
            crop=crop, stride=config.stride,
            mask=np.zeros((rows, cols)),
            type_scores=np.full((rows, cols, N_TYPES), 1.0 / N_TYPES),
            position=np.zeros((rows, cols, 2)),
            direction=np.tile([1.0, 0.0], (rows, cols, 1)),
            confidence=np.ones((rows, cols)),
            distance=np.full((rows, cols), cap),
        )
        aux = RenderAux(np.full(n, -1), np.zeros(n, dtype=int), inside)
        return field_, aux

    near = [_nearest_on_lane(lane, full, config.model_occlusion) for lane in lanes]
    dists = np.stack([nr.dist for nr in near], axis=1)
    order = np.argsort(dists, axis=1, kind="stable")
    first = order[:, 0]
    rows_idx = np.arange(n)
    dist_full = dists[rows_idx, first]
    closest = np.stack([nr.point for nr in near], axis=1)[rows_idx, first]
    t_near = np.stack([nr.t for nr in near], axis=1)[rows_idx, first]
    piece = np.stack([nr.piece for nr in near], axis=1)[rows_idx, first]

    # separation between the two nearest lanes, centre to centre, measured
    # from the closest point on the nearest one; anchors beyond the distance
    # cap see no line at all and stay confident
    confidence = np.ones(n)
    if len(lanes) > 1:
        second = order[:, 1]
        sep = np.full(n, np.inf)
        for b in np.unique(second):
            sel = second == b
            sep[sel] = _nearest_on_lane(lanes[b], closest[sel], config.model_occlusion).dist
        near_enough = dist_full * z <= config.distance_cap
        confidence = np.where((sep * z < config.confidence_separation) & near_enough, 0.0, 1.0)

    dist_app = dist_full * z
    mask = np.where((dist_app <= config.stroke_width / 2.0) & inside, 1.0, 0.0)
    position = (closest - full) * z
    over = dist_app > cap
    if np.any(over):
        position[over] *= (cap / dist_app[over])[:, None]
    distance = np.minimum(dist_app, cap)

    direction = np.empty((n, 2))
    type_scores = np.zeros((n, N_TYPES))
    for li, lane in enumerate(lanes):
        sel = first == li
        if not np.any(sel):
            continue
        direction[sel] = _unit_tangent(lane.curve, t_near[sel])
        pieces = _lane_index(lane, config.model_occlusion)
        types = np.array([p[1].index for p in pieces])
        type_scores[np.flatnonzero(sel), types[piece[sel]]] = 1.0

    field_ = LPField(
        crop=crop, stride=config.stride,
        mask=mask.reshape(rows, cols),
        type_scores=type_scores.reshape(rows, cols, N_TYPES),
        position=position.reshape(rows, cols, 2),
        direction=direction.reshape(rows, cols, 2),
        confidence=confidence.reshape(rows, cols),
        distance=distance.reshape(rows, cols),
    )
    return field_, RenderAux(first, piece, inside)


def render_gt_field(scene_lanes: Sequence[Lane], crop: CropSpec,
                    config: FieldConfig | None = None,
                    image_size: tuple[int, int] | None = None) -> LPField:
    """Supervision targets for ``crop``.

    When ``image_size`` is given, anchors outside the image get ``mask=0``.
    """
    return _render(scene_lanes, crop, config or FieldConfig(), image_size)[0]


# -- decoding ---------------------------------------------------------------

def decode_arrays(field_: LPField, conf_threshold: float = 0.5,
                  mask_threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised decode: ``(xy, type_index, direction)`` of confident cells."""
    for thr in (conf_threshold, mask_threshold):
        if not 0.0 <= thr <= 1.0:
            raise ValueError("thresholds must lie in [0, 1]")
    keep = (field_.mask >= mask_threshold) & (field_.confidence >= conf_threshold)
    local = field_.anchors()[keep] + field_.position[keep]
    xy = field_.to_image(local)
    return xy, field_.argmax_types()[keep], field_.direction[keep]


def decode_points(field_: LPField, conf_threshold: float = 0.5,
                  mask_threshold: float = 0.5) -> list[DecodedPoint]:
    xy, types, dirs = decode_arrays(field_, conf_threshold, mask_threshold)
    z = float(field_.zoom_ratio)
    return [
        DecodedPoint(float(p[0]), float(p[1]), z, LANE_TYPES[t], (float(d[0]), float(d[1])))
        for p, t, d in zip(xy, types, dirs)
    ]


def _cell_rect(field_: LPField, r0: int, c0: int, r1: int, c1: int) -> Rect:
    """Full-image rectangle spanned by cells ``[r0, r1] x [c0, c1]``."""
    s, z = field_.stride, field_.zoom_ratio
    ox, oy = field_.crop.origin
    return Rect(ox + c0 * s / z, oy + r0 * s / z, ox + (c1 + 1) * s / z, oy + (r1 + 1) * s / z)


def uncertain_regions(field_: LPField, mask_threshold: float = 0.5,
                      conf_threshold: float = 0.5,
                      max_extent: float | None = None, min_cells: int = 1) -> list[Rect]:
    """Bounding rectangles of 4-connected masked-but-unconfident cell groups.

    Components with fewer than ``min_cells`` cells are ignored, which keeps
    isolated confidence glitches from spawning crops of their own.

    With ``max_extent`` (full-image pixels) each component is further cut
    into tiles no larger than that, and each tile's cells get their own tight
    rectangle. Long diagonal components then do not turn into huge boxes.
    """
    uncertain = (field_.mask >= mask_threshold) & (field_.confidence < conf_threshold)
    labels, count = ndimage.label(uncertain)
    if count == 0:
        return []
    rects = []
    cell_full = field_.stride / field_.zoom_ratio
    for comp, slc in enumerate(ndimage.find_objects(labels), start=1):
        rr, cc = np.nonzero(labels[slc] == comp)
        if len(rr) < min_cells:
            continue
        rr = rr + slc[0].start
        cc = cc + slc[1].start
        if max_extent is None:
            rects.append(_cell_rect(field_, rr.min(), cc.min(), rr.max(), cc.max()))
            continue
        per_tile = max(int(max_extent // cell_full), 1)
        tr = (rr - rr.min()) // per_tile
        tc = (cc - cc.min()) // per_tile
        keys = tr * (tc.max() + 1) + tc
        for key in np.unique(keys):
            sel = keys == key
            rects.append(_cell_rect(field_, rr[sel].min(), cc[sel].min(), rr[sel].max(), cc[sel].max()))
    return rects

