"""Curve primitives and distance helpers shared across the package.

Image coordinates have their origin at the top-left corner with y pointing
down. World coordinates are right-handed with z up. Points are plain
``numpy`` arrays of shape ``(2,)`` (or ``(N, 2)`` for batches); the typed
wrappers below exist for the curve objects only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Raised for invalid geometric input (bad parameter, degenerate curve)."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, ``[x0, x1) x [y0, y1)``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def intersects(self, other: "Rect") -> bool:
        return (
            self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1
        )

    def contains(self, other: "Rect") -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0 and other.x1 <= self.x1 and other.y1 <= self.y1
        )


@dataclass(frozen=True)
class BezierCurve:
    control_points: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.control_points)
        if len(pts) < 2:
            raise GeometryError("a Bezier curve needs at least two control points")
        dims = {len(p) for p in pts}
        if len(dims) != 1:
            raise GeometryError("control points must share one dimension")
        if not np.all(np.isfinite(np.asarray(pts))):
            raise GeometryError("control points must be finite")
        object.__setattr__(self, "control_points", pts)

    @property
    def degree(self) -> int:
        return len(self.control_points) - 1

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.control_points, dtype=float)

    def evaluate(self, t) -> np.ndarray:
        """Vectorised de Casteljau evaluation; ``t`` may be a scalar or array."""
        t = np.asarray(t, dtype=float)
        ctrl = self.points
        work = np.broadcast_to(ctrl, t.shape + ctrl.shape).copy()
        tt = t[..., None, None]
        for r in range(1, len(ctrl)):
            work = (1.0 - tt) * work[..., :-1, :] + tt * work[..., 1:, :]
        return work[..., 0, :]

    def derivative(self) -> "BezierCurve":
        ctrl = self.points
        if len(ctrl) == 2:
            d = ctrl[1] - ctrl[0]
            return BezierCurve((tuple(d), tuple(d)))
        diffs = self.degree * (ctrl[1:] - ctrl[:-1])
        return BezierCurve(tuple(map(tuple, diffs)))


@dataclass(frozen=True)
class CubicPolynomialLine:
    """``dep = p0 + p1*s + p2*s**2 + p3*s**3`` over ``s`` in ``param_range``.

    ``axis`` names the free coordinate. With ``axis == "y"`` the curve is
    ``x = p(y)``; with ``axis == "x"`` it is ``y = p(x)``. An optional
    ``frame = (ox, oy, theta)`` places the polynomial in a local frame
    rotated by ``theta`` about ``(ox, oy)``; the free coordinate is then the
    local x (used for world-space lanes where no global axis is preferred).
    """

    coefficients: tuple[float, float, float, float]
    axis: str = "y"
    param_range: tuple[float, float] = (0.0, 1.0)
    frame: tuple[float, float, float] | None = None

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) != 4 or not all(math.isfinite(c) for c in coeffs):
            raise GeometryError("need four finite coefficients")
        if self.axis not in ("x", "y"):
            raise GeometryError(f"axis must be 'x' or 'y', got {self.axis!r}")
        lo, hi = (float(v) for v in self.param_range)
        if not hi > lo:
            raise GeometryError("param_range must satisfy max > min")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "param_range", (lo, hi))
        if self.frame is not None:
            object.__setattr__(self, "frame", tuple(float(v) for v in self.frame))

    @property
    def p0(self) -> float:
        return self.coefficients[0]

    @property
    def p1(self) -> float:
        return self.coefficients[1]

    @property
    def p2(self) -> float:
        return self.coefficients[2]

    @property
    def p3(self) -> float:
        return self.coefficients[3]

    def value(self, s):
        p0, p1, p2, p3 = self.coefficients
        s = np.asarray(s, dtype=float)
        return p0 + s * (p1 + s * (p2 + s * p3))

    def evaluate(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        dep = self.value(s)
        if self.axis == "y":
            local = np.stack([dep, s], axis=-1)
        else:
            local = np.stack([s, dep], axis=-1)
        if self.frame is None:
            return local
        ox, oy, theta = self.frame
        c, sn = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -sn], [sn, c]])
        return local @ rot.T + np.array([ox, oy])


Curve = Union[BezierCurve, CubicPolynomialLine]


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or len(v) < 2:
            raise GeometryError("a polyline needs at least two vertices")
        keep = np.ones(len(v), dtype=bool)
        keep[1:] = np.any(v[1:] != v[:-1], axis=1)
        v = v[keep]
        if len(v) < 2:
            raise GeometryError("polyline has zero length")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    @property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[0], self.vertices[-1]

    def reversed(self) -> "Polyline":
        return Polyline(self.vertices[::-1].copy())

    def resample(self, step: float) -> np.ndarray:
        """Points at arc-length multiples of ``step`` plus the final vertex."""
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        total = cum[-1]
        n = _steps(total, step)
        s = np.linspace(0.0, total, n + 1)
        x = np.interp(s, cum, self.vertices[:, 0])
        y = np.interp(s, cum, self.vertices[:, 1])
        return np.stack([x, y], axis=1)

    def transformed(self, matrix, offset) -> "Polyline":
        return Polyline(self.vertices @ np.asarray(matrix, float).T + np.asarray(offset, float))


def _steps(length: float, step: float) -> int:
    """Segments needed to cover ``length`` in pieces of at most ``step``.

    The relative slack keeps exact multiples from gaining a sliver segment
    through rounding, so counts do not change under rigid motions.
    """
    return max(int(math.ceil(length / step * (1.0 - 1e-9))), 1)


def eval_bezier(curve: BezierCurve, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise GeometryError(f"t={t} outside [0, 1]")
    return curve.evaluate(t)


def eval_poly(line: CubicPolynomialLine, s: float) -> np.ndarray:
    lo, hi = line.param_range
    if not lo <= s <= hi:
        raise GeometryError(f"s={s} outside param_range [{lo}, {hi}]")
    return line.evaluate(s)


def _project_dense(p: np.ndarray, vertices: np.ndarray):
    a = vertices[:-1]
    ab = vertices[1:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    ap = p[:, None, :] - a[None, :, :]
    frac = np.clip(np.einsum("nmj,mj->nm", ap, ab) / denom, 0.0, 1.0)
    foot = a[None] + frac[..., None] * ab[None]
    d2 = np.sum((p[:, None, :] - foot) ** 2, axis=-1)
    idx = np.argmin(d2, axis=1)
    rows = np.arange(len(p))
    return np.sqrt(d2[rows, idx]), foot[rows, idx], idx, frac[rows, idx]


DENSE_LIMIT = 2_000_000


def project_to_segments(points: np.ndarray, vertices: np.ndarray):
    """Closest points of each query point on a polyline.

    Returns ``(distance, closest, segment_index, fraction)`` for every row of
    ``points``. Small problems are solved densely. Large ones first find the
    nearest vertex with a KD-tree: the closest segment then has an endpoint
    within that distance plus the longest segment length, so only segments
    touching those vertices are checked.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    vertices = np.asarray(vertices, dtype=float)
    n_seg = len(vertices) - 1
    if len(p) * n_seg <= DENSE_LIMIT:
        return _project_dense(p, vertices)
    tree = cKDTree(vertices)
    reach = float(np.max(np.linalg.norm(np.diff(vertices, axis=0), axis=1)))
    near, _ = tree.query(p)
    dist = np.empty(len(p))
    foot = np.empty((len(p), 2))
    idx = np.empty(len(p), dtype=int)
    frac = np.empty(len(p))
    for i, cand in enumerate(tree.query_ball_point(p, near + reach * (1 + 1e-9) + 1e-12)):
        cand = np.asarray(cand, dtype=int)
        segs = np.unique(np.clip(np.concatenate([cand - 1, cand]), 0, n_seg - 1))
        a = vertices[segs]
        ab = vertices[segs + 1] - a
        denom = np.einsum("ij,ij->i", ab, ab)
        denom = np.where(denom > 0, denom, 1.0)
        f = np.clip(((p[i] - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        q = a + f[:, None] * ab
        d2 = np.sum((p[i] - q) ** 2, axis=1)
        k = int(np.argmin(d2))
        dist[i], foot[i], idx[i], frac[i] = math.sqrt(d2[k]), q[k], segs[k], f[k]
    return dist, foot, idx, frac


def point_to_polyline(pt, pl: Polyline) -> tuple[float, np.ndarray]:
    dist, closest, _, _ = project_to_segments(np.asarray(pt, float)[None], pl.vertices)
    return float(dist[0]), closest[0]


def _bezier_length_estimate(curve: BezierCurve) -> float:
    return float(np.linalg.norm(np.diff(curve.points, axis=0), axis=1).sum())


def discretize(curve: Curve, step: float) -> Polyline:
    """Sample a curve so consecutive vertices are at most ``step`` apart.

    Bezier curves are sampled on a uniform parameter grid that is refined
    until the spacing bound holds; the control polygon length bounds the arc
    length, so one refinement is almost always enough.
    """
    if step <= 0:
        raise GeometryError("step must be positive")
    if isinstance(curve, BezierCurve):
        lo, hi = 0.0, 1.0
        n = max(int(math.ceil(_bezier_length_estimate(curve) / step)), 1)
    else:
        lo, hi = curve.param_range
        chord = np.linalg.norm(curve.evaluate(hi) - curve.evaluate(lo))
        n = max(int(math.ceil(max(chord, hi - lo) / step)), 1)
    while True:
        pts = curve.evaluate(np.linspace(lo, hi, n + 1))
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if gaps.max() <= step or n > 1_000_000:
            break
        n = int(math.ceil(n * gaps.max() / step)) + 1
    return Polyline(pts)


def closest_on_bezier(curve: BezierCurve, points: np.ndarray, t0: np.ndarray,
                      lo: np.ndarray | float = 0.0, hi: np.ndarray | float = 1.0,
                      iterations: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Polish initial parameters ``t0`` to the exact closest curve points.

    Runs clamped Newton iterations on ``(B(t) - p) . B'(t) = 0`` and keeps
    the best of the start value, the iterate and the interval ends, so the
    result is never worse than the start.
    """
    d1 = curve.derivative()
    d2 = d1.derivative()
    p = np.asarray(points, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, float), t0.shape)
    hi = np.broadcast_to(np.asarray(hi, float), t0.shape)
    t = np.clip(np.asarray(t0, dtype=float), lo, hi)
    for _ in range(iterations):
        diff = curve.evaluate(t) - p
        b1 = d1.evaluate(t)
        b2 = d2.evaluate(t)
        g = np.einsum("ij,ij->i", diff, b1)
        h = np.einsum("ij,ij->i", b1, b1) + np.einsum("ij,ij->i", diff, b2)
        safe = h > 1e-12
        step = np.where(safe, g / np.where(safe, h, 1.0), 0.0)
        t = np.clip(t - step, lo, hi)
    candidates = np.stack([np.clip(t0, lo, hi), t, lo, hi], axis=1)
    pts = curve.evaluate(candidates)
    d = np.linalg.norm(pts - p[:, None, :], axis=-1)
    best = np.argmin(d, axis=1)
    rows = np.arange(len(p))
    return candidates[rows, best], pts[rows, best]


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def as_points(seq: Sequence) -> np.ndarray:
    return np.asarray(seq, dtype=float).reshape(-1, 2)
