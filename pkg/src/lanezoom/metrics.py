"""Lane evaluation: pixel F1, IoU F1 and the endpoint + area line match."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .fitting import DetectedLane
from .geometry import BezierCurve, CubicPolynomialLine, Polyline, discretize, project_to_segments
from .lp_field import Lane, LaneType


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class LineMatchParams:
    dis_thresh: float = 40.0
    area_thresh_factor: float = 1.0
    check_type: bool = False

    def __post_init__(self):
        if not self.dis_thresh > 0:
            raise ValueError("dis_thresh must be positive")
        if not self.area_thresh_factor > 0:
            raise ValueError("area_thresh_factor must be positive")


def _as_polyline(item, step: float) -> Polyline:
    if isinstance(item, Polyline):
        return item
    if isinstance(item, Lane):
        return discretize(item.curve, step)
    if isinstance(item, DetectedLane):
        return discretize(item.curve, step)
    if isinstance(item, (BezierCurve, CubicPolynomialLine)):
        return discretize(item, step)
    return Polyline(np.asarray(item, dtype=float))


def _lane_type(item) -> LaneType | None:
    return getattr(item, "lane_type", None)


def rasterize(lines: Sequence, thickness: float, image_size: tuple[int, int],
              step: float = 2.0) -> np.ndarray:
    """Boolean stroke mask: pixels whose centre is closer than ``thickness/2``.

    The strict inequality makes two strokes whose centre lines are exactly
    ``thickness`` apart touch without sharing a pixel.
    """
    w, h = image_size
    half = thickness / 2.0
    best = np.full((h, w), np.inf)
    for item in lines:
        verts = _as_polyline(item, step).vertices
        for a, b in zip(verts[:-1], verts[1:]):
            x0 = max(int(math.floor(min(a[0], b[0]) - half)), 0)
            x1 = min(int(math.ceil(max(a[0], b[0]) + half)) + 1, w)
            y0 = max(int(math.floor(min(a[1], b[1]) - half)), 0)
            y1 = min(int(math.ceil(max(a[1], b[1]) + half)) + 1, h)
            if x0 >= x1 or y0 >= y1:
                continue
            gx, gy = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
            ab = b - a
            denom = float(ab @ ab) or 1.0
            t = np.clip(((gx - a[0]) * ab[0] + (gy - a[1]) * ab[1]) / denom, 0.0, 1.0)
            d = np.hypot(gx - (a[0] + t * ab[0]), gy - (a[1] + t * ab[1]))
            np.minimum(best[y0:y1, x0:x1], d, out=best[y0:y1, x0:x1])
    return best < half


def pixel_f1(gt: Sequence, pred: Sequence, thickness: float = 40.0,
             image_size: tuple[int, int] = (2048, 1536)) -> MatchResult:
    if thickness <= 0:
        raise ValueError("thickness must be positive")
    g = rasterize(gt, thickness, image_size)
    p = rasterize(pred, thickness, image_size)
    return MatchResult(int(np.sum(g & p)), int(np.sum(p & ~g)), int(np.sum(g & ~p)))


def iou_matrix(gt: Sequence, pred: Sequence, width: float,
               image_size: tuple[int, int]) -> np.ndarray:
    gm = [rasterize([g], width, image_size) for g in gt]
    pm = [rasterize([p], width, image_size) for p in pred]
    out = np.zeros((len(gm), len(pm)))
    for i, a in enumerate(gm):
        for j, b in enumerate(pm):
            union = np.sum(a | b)
            out[i, j] = np.sum(a & b) / union if union else 0.0
    return out


def _greedy(scores: np.ndarray, ok: np.ndarray, descending: bool) -> list[tuple[int, int]]:
    """One-to-one matching over admissible pairs, best score first."""
    cand = [(scores[i, j], i, j) for i, j in zip(*np.nonzero(ok))]
    cand.sort(key=lambda c: ((-c[0] if descending else c[0]), c[1], c[2]))
    used_g, used_p, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        pairs.append((int(i), int(j)))
    return sorted(pairs)


def _max_matching(cost: np.ndarray, ok: np.ndarray) -> list[tuple[int, int]]:
    """Largest one-to-one matching over admissible pairs, least total cost among those.

    Each admissible pair is scored ``cost / (total + 1) - 1`` so one extra pair
    always outweighs any cost saving; inadmissible pairs score 0.
    """
    if not ok.any():
        return []
    c = np.where(ok, cost, 0.0)
    weight = np.where(ok, c / (float(c.sum()) + 1.0) - 1.0, 0.0)
    rows, cols = linear_sum_assignment(weight)
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if ok[i, j])


def iou_f1(gt: Sequence, pred: Sequence, width: float = 30.0, iou_threshold: float = 0.5,
           image_size: tuple[int, int] = (2048, 1536)) -> MatchResult:
    if width <= 0:
        raise ValueError("width must be positive")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    if not gt or not pred:
        return MatchResult(0, len(pred), len(gt))
    ious = iou_matrix(gt, pred, width, image_size)
    pairs = _greedy(ious, ious >= iou_threshold, descending=True)
    tp = len(pairs)
    return MatchResult(tp, len(pred) - tp, len(gt) - tp, tuple(pairs))


def area_between(a: Polyline, b: Polyline, step: float = 1.0) -> float:
    """Integrated distance from ``a`` to ``b`` along the arc length of ``a``.

    Samples ``a`` every ``step`` units of arc length, takes the distance of
    each sample to ``b`` and integrates with the trapezoid rule.
    """
    samples = a.resample(step)
    d, *_ = project_to_segments(samples, b.vertices)
    ds = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    return float(np.sum(0.5 * (d[1:] + d[:-1]) * ds))


@dataclass(frozen=True)
class PairScore:
    endpoint_distances: tuple[float, float]
    area: float
    gt_length: float


def score_pair(gt: Polyline, pred: Polyline, area_step: float = 1.0) -> PairScore:
    """Endpoint distances (pred oriented to the cheaper pairing) and area."""
    g0, g1 = gt.endpoints
    p0, p1 = pred.endpoints
    same = (np.linalg.norm(g0 - p0), np.linalg.norm(g1 - p1))
    swap = (np.linalg.norm(g0 - p1), np.linalg.norm(g1 - p0))
    ends = same if sum(same) <= sum(swap) else swap
    return PairScore((float(ends[0]), float(ends[1])), area_between(gt, pred, area_step), gt.length)


def line_match_pairs(gt: Sequence, pred: Sequence, params: LineMatchParams | None = None,
                     step: float = 1.0) -> tuple[list[tuple[int, int]], dict]:
    """One-to-one matches plus every pair's score.

    The matching has as many pairs as possible and, among those, the least
    total area. Raising ``dis_thresh`` only adds admissible pairs, so the
    match count never drops.
    """
    params = params or LineMatchParams()
    gl = [_as_polyline(g, step) for g in gt]
    pl = [_as_polyline(p, step) for p in pred]
    scores: dict[tuple[int, int], PairScore] = {}
    area = np.full((len(gl), len(pl)), np.inf)
    ok = np.zeros((len(gl), len(pl)), dtype=bool)
    for i, g in enumerate(gl):
        for j, p in enumerate(pl):
            s = score_pair(g, p, step)
            scores[(i, j)] = s
            area[i, j] = s.area
            good = (max(s.endpoint_distances) <= params.dis_thresh
                    and s.area <= params.area_thresh_factor * params.dis_thresh * s.gt_length)
            if good and params.check_type:
                good = _lane_type(gt[i]) == _lane_type(pred[j])
            ok[i, j] = good
    return _max_matching(area, ok), scores


def line_match_f1(gt: Sequence, pred: Sequence, params: LineMatchParams | None = None,
                  step: float = 1.0) -> MatchResult:
    pairs, _ = line_match_pairs(gt, pred, params, step)
    tp = len(pairs)
    return MatchResult(tp, len(pred) - tp, len(gt) - tp, tuple(pairs))
