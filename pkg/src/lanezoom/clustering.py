"""DBSCAN over zoomed points with the hierarchical distance.

The hierarchical distance scales the Euclidean image distance by the larger
of the two zoom ratios, so points found at a fine zoom level are judged on
a finer scale than thumbnail points.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    eps: float = 40.0
    min_pts: int = 3

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if int(self.min_pts) < 1:
            raise ValueError("min_pts must be at least 1")


def hdis(a, b) -> float:
    """``max(a.z, b.z) * |a.xy - b.xy|`` for ``(x, y, z)`` triples."""
    return max(a[2], b[2]) * float(np.hypot(a[0] - b[0], a[1] - b[1]))


def hdis_matrix(xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=float)
    d = np.hypot(xyz[:, None, 0] - xyz[None, :, 0], xyz[:, None, 1] - xyz[None, :, 1])
    return np.maximum(xyz[:, None, 2], xyz[None, :, 2]) * d


def canonical_order(xyz: np.ndarray) -> np.ndarray:
    """Indices sorted by ``(y, x, z)``; ties keep input order."""
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    return np.lexsort((np.arange(len(xyz)), xyz[:, 2], xyz[:, 0], xyz[:, 1]))


def as_xyz(points) -> np.ndarray:
    """Accept ``(N, 3)`` arrays or objects with ``x``, ``y``, ``z``."""
    if isinstance(points, np.ndarray):
        return points.astype(float).reshape(-1, 3)
    return np.array([(p[0], p[1], p[2]) if not hasattr(p, "x") else (p.x, p.y, p.z)
                     for p in points], dtype=float).reshape(-1, 3)


def hdis_neighbors(xyz: np.ndarray, eps: float) -> list[np.ndarray]:
    """Neighbour lists (self included) under the hierarchical distance.

    Candidates come from a KD-tree ball of radius ``eps / z_i`` around each
    point, which is a superset because ``max(z_i, z_j) >= z_i``; the exact
    criterion is then applied with the same arithmetic as :func:`hdis`.
    """
    n = len(xyz)
    if n == 0:
        return []
    tree = cKDTree(xyz[:, :2])
    radii = eps / xyz[:, 2] * (1.0 + 1e-9)
    out = []
    for i, cand in enumerate(tree.query_ball_point(xyz[:, :2], radii)):
        cand = np.asarray(cand, dtype=int)
        d = np.hypot(xyz[i, 0] - xyz[cand, 0], xyz[i, 1] - xyz[cand, 1])
        ok = np.maximum(xyz[i, 2], xyz[cand, 2]) * d <= eps
        out.append(np.sort(cand[ok]))
    return out


def dbscan(points, params: ClusterParams | None = None,
           metric: Callable | None = None) -> np.ndarray:
    """Density-based clustering; returns labels (``NOISE`` = -1) in input order.

    Points are visited in canonical ``(y, x, z)`` order, so a border point
    reachable from several clusters joins the one seeded first in that order.
    ``metric`` defaults to the hierarchical distance with an index-backed
    neighbour search; any other callable on ``(x, y, z)`` rows falls back to
    an O(n^2) search.
    """
    params = params or ClusterParams()
    xyz = as_xyz(points)
    n = len(xyz)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    if metric is None or metric is hdis:
        neighbors = hdis_neighbors(xyz, params.eps)
    else:
        neighbors = [
            np.array([j for j in range(n) if metric(xyz[i], xyz[j]) <= params.eps], dtype=int)
            for i in range(n)
        ]
    core = np.array([len(nb) >= params.min_pts for nb in neighbors])
    visited = np.zeros(n, dtype=bool)
    rank = np.empty(n, dtype=int)
    order = canonical_order(xyz)
    rank[order] = np.arange(n)
    cluster = 0
    for i in order:
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = deque([i])
        while queue:
            q = queue.popleft()
            # expand in canonical order for reproducible traversal
            for j in sorted(neighbors[q], key=rank.__getitem__):
                if labels[j] == NOISE:
                    labels[j] = cluster
                if core[j] and not visited[j]:
                    visited[j] = True
                    queue.append(j)
        cluster += 1
    return labels


def n_clusters(labels: Sequence[int]) -> int:
    labels = np.asarray(labels)
    return int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
