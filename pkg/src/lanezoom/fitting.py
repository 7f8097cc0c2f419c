"""Turn point clusters into typed cubic lanes."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CubicPolynomialLine, GeometryError
from .lp_field import LANE_TYPES, LaneType

log = logging.getLogger(__name__)


class UnderdeterminedFit(GeometryError):
    pass


@dataclass(frozen=True)
class FitParams:
    axis: str = "y"          # "x", "y", "auto" or "pca"
    weighted: bool = True    # weight each point by its zoom ratio
    min_support: int = 50    # clusters with fewer points are discarded as detector debris

    def __post_init__(self):
        if self.axis not in ("x", "y", "auto", "pca"):
            raise ValueError(f"unknown axis mode {self.axis!r}")
        if int(self.min_support) < 0:
            raise ValueError("min_support must be non-negative")


@dataclass(frozen=True)
class DetectedLane:
    curve: CubicPolynomialLine
    lane_type: LaneType
    support: int
    rms_residual: float
    cluster_id: int = -1


def _scaled_design(s: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, float, float]:
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    u = (s - center) / half
    return np.vander(u, 4, increasing=True), center, half


def _unscale(a: np.ndarray, center: float, half: float) -> np.ndarray:
    """Coefficients in ``s`` from coefficients in ``u = (s - center) / half``."""
    coeffs = np.zeros(4)
    for k, ak in enumerate(a):
        # ((s - c) / h)^k expanded binomially
        for j in range(k + 1):
            coeffs[j] += ak * math.comb(k, j) * (-center) ** (k - j) / half ** k
    return coeffs


def weighted_cubic(s: np.ndarray, dep: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Weighted least-squares cubic of ``dep`` on ``s``.

    The parameter is mapped to ``[-1, 1]`` before solving; returns raw
    coefficients and the scaling used.
    """
    lo, hi = float(s.min()), float(s.max())
    if len(np.unique(s)) < 4 or not hi > lo:
        raise UnderdeterminedFit("need at least four distinct parameter values")
    V, center, half = _scaled_design(s, lo, hi)
    sw = np.sqrt(w)
    a, *_ = np.linalg.lstsq(V * sw[:, None], dep * sw, rcond=None)
    return _unscale(a, center, half), (lo, hi, center, half, a)


def _pca_frame(xy: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    mean = (xy * w[:, None]).sum(axis=0) / w.sum()
    c = xy - mean
    cov = (c * w[:, None]).T @ c
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, np.argmax(evals)]
    theta = math.atan2(major[1], major[0])
    return float(mean[0]), float(mean[1]), theta


def fit_cubic(points, axis: str = "y", weighted: bool = True) -> CubicPolynomialLine:
    """Fit ``dep = p(param)`` to ``(x, y, z)`` points.

    ``axis`` picks the free coordinate: ``"y"`` (x as a function of y),
    ``"x"``, ``"auto"`` (whichever coordinate spans more) or ``"pca"`` (local
    frame along the principal direction of the points).
    """
    xyz = np.asarray([(p.x, p.y, p.z) if hasattr(p, "x") else tuple(p) for p in points],
                     dtype=float).reshape(-1, 3)
    if len(xyz) < 4:
        raise UnderdeterminedFit(f"need at least 4 points, got {len(xyz)}")
    w = xyz[:, 2] if weighted else np.ones(len(xyz))
    if np.any(w <= 0):
        raise GeometryError("weights (zoom ratios) must be positive")
    xy = xyz[:, :2]
    frame = None
    if axis == "pca":
        frame = _pca_frame(xy, w)
        ox, oy, theta = frame
        c, s = math.cos(theta), math.sin(theta)
        local = (xy - [ox, oy]) @ np.array([[c, -s], [s, c]])
        param, dep, axis = local[:, 0], local[:, 1], "x"
    else:
        if axis == "auto":
            span = np.ptp(xy, axis=0)
            axis = "y" if span[1] >= span[0] else "x"
        if axis == "y":
            param, dep = xy[:, 1], xy[:, 0]
        else:
            param, dep = xy[:, 0], xy[:, 1]
    coeffs, (lo, hi, *_) = weighted_cubic(param, dep, w)
    return CubicPolynomialLine(tuple(coeffs), axis, (lo, hi), frame)


def local_coordinates(line: CubicPolynomialLine, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(param, dependent)`` of image/world points in the line's own frame."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if line.frame is not None:
        ox, oy, theta = line.frame
        c, s = math.cos(theta), math.sin(theta)
        xy = (xy - [ox, oy]) @ np.array([[c, -s], [s, c]])
    if line.axis == "y":
        return xy[:, 1], xy[:, 0]
    return xy[:, 0], xy[:, 1]


def assign_type(cluster_points: Sequence) -> LaneType:
    """Plurality vote; gap votes count only if nothing else was seen."""
    if not cluster_points:
        raise ValueError("cannot type an empty cluster")
    votes = Counter(p.lane_type if hasattr(p, "lane_type") else LaneType(p)
                    for p in cluster_points)
    if any(t is not LaneType.OcclusionOrGap for t in votes):
        votes.pop(LaneType.OcclusionOrGap, None)
    best = max(votes.values())
    return next(t for t in LANE_TYPES if votes.get(t, 0) == best)


def clusters_to_lanes(points: Sequence, labels: Sequence[int],
                      params: FitParams | None = None) -> list[DetectedLane]:
    """One lane per non-noise cluster with enough points for a cubic fit."""
    params = params or FitParams()
    labels = np.asarray(labels, dtype=int)
    lanes: list[DetectedLane] = []
    dropped = small = 0
    for cid in sorted(set(labels.tolist()) - {-1}):
        members = [points[i] for i in np.flatnonzero(labels == cid)]
        if len(members) < params.min_support:
            small += 1
            continue
        try:
            curve = fit_cubic(members, params.axis, params.weighted)
        except UnderdeterminedFit:
            dropped += 1
            continue
        xy = np.array([(p.x, p.y) for p in members])
        s, dep = local_coordinates(curve, xy)
        rms = float(np.sqrt(np.mean((dep - curve.value(s)) ** 2)))
        lanes.append(DetectedLane(curve, assign_type(members), len(members), rms, cid))
    if dropped:
        log.info("dropped %d underdetermined clusters", dropped)
    if small:
        log.info("dropped %d clusters below min_support=%d", small, params.min_support)
    return lanes
