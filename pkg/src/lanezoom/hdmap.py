"""Ground-surface fitting, ground projection and cross-shot lane merging.

Camera frame: x right, y down, z forward (pinhole). A shot's pose maps
camera coordinates to world coordinates, ``X_w = R @ X_c + C``, with the
world right-handed and z up.

Ground surface parameters describe the road plane relative to the camera
with two numbers: ``angle`` (downward pitch of the optical axis relative to
the road) and ``height`` (camera above the road). In camera coordinates the
plane is ``cos(angle) * y + sin(angle) * z = height``; roll is not modelled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .clustering import ClusterParams, dbscan
from .fitting import DetectedLane, FitParams, clusters_to_lanes, fit_cubic
from .geometry import CubicPolynomialLine, GeometryError, Polyline, discretize
from .lp_field import LaneType
from .metrics import LineMatchParams, area_between, line_match_pairs

log = logging.getLogger(__name__)


class DegenerateInput(GeometryError):
    pass


class NoIntersection(GeometryError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    principal_point: tuple[float, float]
    image_size: tuple[int, int]

    def __post_init__(self):
        if not self.focal > 0:
            raise GeometryError("focal length must be positive")
        cx, cy = self.principal_point
        w, h = self.image_size
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise GeometryError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.focal, 0, cx], [0, self.focal, cy], [0, 0, 1.0]])


@dataclass(frozen=True, eq=False)
class ShotPose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        C = np.asarray(self.position, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise GeometryError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", C)

    @classmethod
    def looking(cls, position, heading: float, pitch: float) -> "ShotPose":
        """Camera at ``position`` facing ``heading`` (rad from +x), pitched down."""
        ch, sh = math.cos(heading), math.sin(heading)
        cp, sp = math.cos(pitch), math.sin(pitch)
        fwd = np.array([ch * cp, sh * cp, -sp])
        right = np.array([sh, -ch, 0.0])
        down = np.cross(fwd, right)
        return cls(np.asarray(position, float), np.stack([right, down, fwd], axis=1))

    def world_to_camera(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, float) - self.position) @ self.rotation

    def camera_to_world(self, Xc: np.ndarray) -> np.ndarray:
        return np.asarray(Xc, float) @ self.rotation.T + self.position

    def transformed(self, Q: np.ndarray, t: np.ndarray) -> "ShotPose":
        return ShotPose(Q @ self.position + t, Q @ self.rotation)


@dataclass(frozen=True)
class GroundSurfaceParams:
    angle: float
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise GeometryError("camera height must be positive")
        if not abs(self.angle) < math.pi / 2:
            raise GeometryError("|angle| must be below pi/2")

    @property
    def normal(self) -> np.ndarray:
        """Unit up-vector of the ground in camera coordinates."""
        return np.array([0.0, -math.cos(self.angle), -math.sin(self.angle)])


@dataclass
class Shot:
    id: str
    pose: ShotPose
    intrinsics: CameraIntrinsics
    gsp: GroundSurfaceParams | None = None
    detections: list[DetectedLane] = field(default_factory=list)


@dataclass(frozen=True)
class MapLane:
    polyline: Polyline
    lane_type: LaneType = LaneType.WhiteSolid


@dataclass
class GroundTruthMap:
    lanes: list[MapLane]


def fit_gsp(ground_points: np.ndarray) -> GroundSurfaceParams:
    """Least-squares ground plane in the no-roll family.

    Minimises ``sum (cos(a) y + sin(a) z - h)^2`` over camera-frame points,
    which is an orthogonal line fit in the camera's y-z plane: the plane
    normal is the minor principal axis of the centred ``(y, z)`` scatter.
    """
    P = np.asarray(ground_points, dtype=float).reshape(-1, 3)
    if len(P) < 3:
        raise DegenerateInput("need at least three ground points")
    centred = P - P.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateInput("ground points are collinear")
    yz = P[:, 1:]
    mean = yz.mean(axis=0)
    cov = (yz - mean).T @ (yz - mean)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 1e-12 * max(len(P), 1):
        raise DegenerateInput("ground points do not constrain the plane")
    n = evecs[:, 0]
    if n[0] < 0:
        n = -n
    if n[0] <= 0:
        raise DegenerateInput("ground plane is parallel to the optical axis direction")
    h = float(n @ mean)
    if h <= 0:
        raise DegenerateInput("fitted plane is not below the camera")
    return GroundSurfaceParams(math.atan2(n[1], n[0]), h)


def shot_ground_points(shot: Shot, points: Sequence[dict], radius: float = 30.0) -> np.ndarray:
    """Camera-frame ground points for ``shot`` from an ingest point list.

    A point is used when it is labelled ground and either lists ``shot`` among
    its observers or, lacking an observer list, lies within ``radius`` metres
    (horizontally) of the camera.
    """
    sel = []
    for p in points:
        if not p.get("ground", False):
            continue
        xyz = np.asarray(p["xyz"], dtype=float)
        observers = p.get("shots")
        if observers is not None:
            if shot.id in observers:
                sel.append(xyz)
        elif np.hypot(*(xyz[:2] - shot.pose.position[:2])) <= radius:
            sel.append(xyz)
    if not sel:
        return np.zeros((0, 3))
    return shot.pose.world_to_camera(np.array(sel))


def gsp_from_pose(pose: ShotPose, ground_z: float = 0.0) -> GroundSurfaceParams:
    """True parameters for a camera over the flat world plane ``z = ground_z``."""
    up_c = pose.rotation.T @ np.array([0.0, 0.0, 1.0])
    return GroundSurfaceParams(math.atan2(-up_c[2], -up_c[1]),
                               float(pose.position[2] - ground_z))


def gsp_error(estimated: GroundSurfaceParams, truth: GroundSurfaceParams) -> tuple[float, float]:
    """``(height error in metres, angle error in degrees)``."""
    return (abs(estimated.height - truth.height),
            math.degrees(abs(estimated.angle - truth.angle)))


def _rays(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    cx, cy = intr.principal_point
    return np.column_stack([(px[:, 0] - cx) / intr.focal, (px[:, 1] - cy) / intr.focal,
                            np.ones(len(px))])


def backproject_camera(pixels: np.ndarray, intr: CameraIntrinsics,
                       gsp: GroundSurfaceParams) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame ground points and a validity mask (ray hits the ground ahead)."""
    d = _rays(pixels, intr)
    nd = d @ gsp.normal
    valid = nd < -1e-9
    s = np.where(valid, -gsp.height / np.where(valid, nd, -1.0), np.nan)
    return d * s[:, None], valid


def project_to_ground(pt, shot: Shot) -> np.ndarray:
    """World point where the pixel's viewing ray meets the shot's ground plane."""
    if shot.gsp is None:
        raise GeometryError(f"shot {shot.id} has no ground surface parameters")
    Xc, valid = backproject_camera(np.asarray(pt, float)[None], shot.intrinsics, shot.gsp)
    if not valid[0]:
        raise NoIntersection(f"pixel {tuple(pt)} is at or above the horizon")
    return shot.pose.camera_to_world(Xc[0])


def project_to_image(X: np.ndarray, pose: ShotPose, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of world points; returns pixels and depth."""
    Xc = pose.world_to_camera(np.asarray(X, float).reshape(-1, 3))
    z = Xc[:, 2]
    cx, cy = intr.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.focal * Xc[:, 0] / z + cx
        v = intr.focal * Xc[:, 1] / z + cy
    return np.column_stack([u, v]), z


def ground_resolution(pixels: np.ndarray, intr: CameraIntrinsics,
                      gsp: GroundSurfaceParams) -> np.ndarray:
    """Pixels per metre across an image row on the ground plane.

    Neighbouring pixels of the same row land this far apart on the ground;
    for a flat road without roll the value depends on the row only.
    """
    px = np.asarray(pixels, float).reshape(-1, 2)
    a, va = backproject_camera(px, intr, gsp)
    b, vb = backproject_camera(px + [1.0, 0.0], intr, gsp)
    gsd = np.linalg.norm(b - a, axis=1)
    return np.where(va & vb, 1.0 / gsd, np.nan)


@dataclass(frozen=True)
class MergeParams:
    cluster: ClusterParams = ClusterParams(eps=50.0, min_pts=3)
    fit: FitParams = FitParams(axis="pca", weighted=True, min_support=0)
    image_step: float = 1.0      # pixels between samples along a detection
    world_step: float = 0.25     # metres between resampled world points, at most
    hdis_step: float = 10.0      # ... and at most this many HDis units
    max_range: float = 60.0      # metres of ground distance from the camera


@dataclass
class ProjectedPoint:
    """World-space sample carrying the hierarchical-distance scale."""

    x: float
    y: float
    z: float                     # ground resolution, pixels per metre
    lane_type: LaneType
    height: float = 0.0          # world z of the projected point


def project_detection(lane: DetectedLane, shot: Shot, params: MergeParams) -> list[ProjectedPoint]:
    """Sample an image-space lane, lift it to the ground and resample it.

    Resampling is uniform in a mix of metres and HDis units so that spacing
    stays well under the clustering radius where ``z`` is large (near field)
    without flooding the far field with points.
    """
    lo, hi = lane.curve.param_range
    n = max(int(math.ceil((hi - lo) / params.image_step)), 1)
    px = lane.curve.evaluate(np.linspace(lo, hi, n + 1))
    Xc, valid = backproject_camera(px, shot.intrinsics, shot.gsp)
    res = ground_resolution(px, shot.intrinsics, shot.gsp)
    valid &= np.isfinite(res)
    Xw = shot.pose.camera_to_world(np.where(valid[:, None], Xc, 0.0))
    ground = np.hypot(*(Xw[:, :2] - shot.pose.position[:2]).T)
    valid &= ground <= params.max_range
    if valid.sum() < 2:
        return []
    Xw, res = Xw[valid], res[valid]
    seg = np.linalg.norm(np.diff(Xw[:, :2], axis=0), axis=1)
    zmid = np.maximum(res[1:], res[:-1])
    cost = np.concatenate([[0.0], np.cumsum(np.maximum(seg / params.world_step,
                                                       seg * zmid / params.hdis_step))])
    if cost[-1] <= 0:
        return []
    u = np.linspace(0.0, cost[-1], max(int(math.ceil(cost[-1])), 1) + 1)
    cols = [np.interp(u, cost, Xw[:, k]) for k in range(3)]
    zz = np.interp(u, cost, res)
    return [ProjectedPoint(float(x), float(y), float(z), lane.lane_type, float(hh))
            for x, y, hh, z in zip(cols[0], cols[1], cols[2], zz)]


def merge_lanes(shots: Sequence[Shot], params: MergeParams | None = None,
                skipped: list | None = None) -> list[DetectedLane]:
    """Project every shot's detections to the ground, cluster and refit.

    Shots without ground surface parameters are skipped; their ids are
    appended to ``skipped`` when a list is supplied.
    """
    params = params or MergeParams()
    points: list[ProjectedPoint] = []
    for shot in shots:
        if shot.gsp is None:
            log.warning("skipping shot %s: no ground surface parameters", shot.id)
            if skipped is not None:
                skipped.append(shot.id)
            continue
        for lane in shot.detections:
            points.extend(project_detection(lane, shot, params))
    if not points:
        return []
    labels = dbscan(points, params.cluster)
    return clusters_to_lanes(points, labels, params.fit)


@dataclass
class MapErrorReport:
    mean_error: float | None
    per_lane: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]

    def to_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "matched": [{"gt": g, "pred": p, "error": e} for g, p, e in self.per_lane],
            "unmatched_gt": self.unmatched_gt,
            "unmatched_pred": self.unmatched_pred,
        }


def lane_polyline(lane, step: float) -> Polyline:
    if isinstance(lane, MapLane):
        return lane.polyline
    if isinstance(lane, Polyline):
        return lane
    curve = lane.curve if isinstance(lane, DetectedLane) else lane
    if isinstance(curve, CubicPolynomialLine):
        return discretize(curve, step)
    raise TypeError(f"cannot discretise {type(lane).__name__}")


def map_error(merged: Sequence, gt: GroundTruthMap,
              params: LineMatchParams | None = None, step: float = 0.05) -> MapErrorReport:
    """Match merged lanes to the map and report mean lateral offset (metres).

    Matching follows the endpoint + area rule with thresholds in metres; a
    matched pair's error is ``area_between(gt, pred) / length(gt)``. With no
    matches ``mean_error`` is ``None``.
    """
    params = params or LineMatchParams(dis_thresh=2.0)
    gl = [lane_polyline(g, step) for g in gt.lanes]
    pl = [lane_polyline(p, step) for p in merged]
    pairs, _ = line_match_pairs(gl, pl, params, step)
    per_lane = [(i, j, area_between(gl[i], pl[j], step) / gl[i].length) for i, j in pairs]
    matched_g = {i for i, _, _ in per_lane}
    matched_p = {j for _, j, _ in per_lane}
    mean = float(np.mean([e for *_, e in per_lane])) if per_lane else None
    return MapErrorReport(mean, per_lane,
                          [i for i in range(len(gl)) if i not in matched_g],
                          [j for j in range(len(pl)) if j not in matched_p])


# ---------------------------------------------------------------------------
# Synthetic straight-road captures


@dataclass(frozen=True)
class RoadSetup:
    """A straight road along world +x observed by forward-facing cameras."""

    lane_offsets: tuple[float, ...] = (-3.5, 0.0, 3.5)
    camera_offset: float = -1.75
    camera_height: float = 1.5
    pitch: float = 0.05
    intrinsics: CameraIntrinsics = CameraIntrinsics(1000.0, (640.0, 360.0), (1280, 720))
    max_range: float = 40.0
    lane_type: LaneType = LaneType.WhiteSolid


@dataclass(frozen=True)
class CaptureNoise:
    pose_sigma: float = 0.3          # metres, horizontal position of each shot
    yaw_sigma: float = 0.0           # radians
    ground_sigma: float = 0.02       # metres, SfM ground points
    ground_points: int = 500
    pixel_sigma: float = 0.5         # detection jitter in pixels


def _lane_world(setup: RoadSetup, offset: float, x0: float, x1: float, step: float = 0.1) -> np.ndarray:
    xs = np.arange(x0, x1 + 0.5 * step, step)
    return np.column_stack([xs, np.full_like(xs, offset), np.zeros_like(xs)])


def _visible(setup: RoadSetup, pose: ShotPose, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    px, depth = project_to_image(X, pose, setup.intrinsics)
    w, h = setup.intrinsics.image_size
    rng_ = np.hypot(*(X[:, :2] - pose.position[:2]).T)
    ok = ((depth > 0.1) & (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
          & (rng_ <= setup.max_range))
    return px, ok


class RoadCapture(NamedTuple):
    shots: list[Shot]
    gt_map: GroundTruthMap
    ground_points: dict[str, np.ndarray]   # world frame, per observing shot


def simulate_road(shot_x: Sequence[float], seed: int, setup: RoadSetup | None = None,
                  noise: CaptureNoise | None = None) -> RoadCapture:
    """Shots along a straight road and the map of what they saw.

    Each shot's camera sees the true road; detections are image cubics fitted
    to jittered projections of the lane lines, the ground surface comes from
    noisy camera-frame ground points, and the reported pose differs from the
    true one by the configured position and heading noise. The map lanes are
    clipped to the stretch that at least one camera observed.
    """
    setup = setup or RoadSetup()
    noise = noise or CaptureNoise()
    rng = np.random.default_rng(seed)
    x_lo = min(shot_x) - 1.0
    x_hi = max(shot_x) + setup.max_range + 1.0
    truths = [_lane_world(setup, off, x_lo, x_hi) for off in setup.lane_offsets]
    seen = [np.zeros(len(t), dtype=bool) for t in truths]
    shots: list[Shot] = []
    cam_points = []
    for k, x in enumerate(shot_x):
        true_pose = ShotPose.looking((x, setup.camera_offset, setup.camera_height), 0.0, setup.pitch)
        gp = np.column_stack([rng.uniform(x + 3, x + 30, noise.ground_points),
                              rng.uniform(-8, 8, noise.ground_points),
                              np.zeros(noise.ground_points)])
        cam = true_pose.world_to_camera(gp) + rng.normal(0.0, noise.ground_sigma, gp.shape)
        try:
            gsp = fit_gsp(cam)
        except GeometryError:
            gsp = None
        dets = []
        for li, X in enumerate(truths):
            px, ok = _visible(setup, true_pose, X)
            seen[li] |= ok
            if ok.sum() < 8:
                continue
            obs = px[ok] + rng.normal(0.0, noise.pixel_sigma, (int(ok.sum()), 2))
            curve = fit_cubic(np.column_stack([obs, np.ones(len(obs))]), axis="y", weighted=False)
            dets.append(DetectedLane(curve, setup.lane_type, len(obs), 0.0, li))
        d = rng.normal(0.0, noise.pose_sigma, 2)
        est_pose = ShotPose.looking((x + d[0], setup.camera_offset + d[1], setup.camera_height),
                                    rng.normal(0.0, noise.yaw_sigma) if noise.yaw_sigma else 0.0,
                                    setup.pitch)
        shots.append(Shot(f"shot{k:03d}", est_pose, setup.intrinsics, gsp, dets))
        cam_points.append(cam)
    lanes = []
    for X, ok in zip(truths, seen):
        if ok.sum() >= 2:
            idx = np.flatnonzero(ok)
            lanes.append(MapLane(Polyline(X[idx[0]:idx[-1] + 1, :2]), setup.lane_type))
    ground = {s.id: s.pose.camera_to_world(c) for s, c in zip(shots, cam_points)}
    return RoadCapture(shots, GroundTruthMap(lanes), ground)
