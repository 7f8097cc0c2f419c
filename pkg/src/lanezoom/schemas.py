"""Versioned JSON documents exchanged between CLI steps.

Every document is an object with ``schema_version`` (``"MAJOR.MINOR"``) and
``kind``. Readers accept any minor version of a supported major and reject
newer majors. Floats are written with ``repr`` precision, so reading a
document back yields bit-identical numbers.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .fitting import DetectedLane
from .geometry import CubicPolynomialLine, Polyline
from .hdmap import (CameraIntrinsics, GroundSurfaceParams, GroundTruthMap, MapLane, Shot,
                    ShotPose)
from .lp_field import CropSpec, DecodedPoint, LaneType
from .scene import Scene
from .zoom import PipelineResult, StageStats, ZoomSchedule

SCHEMA_VERSION = "1.0"
SUPPORTED_MAJOR = 1

KINDS = ("scene", "pipeline_result", "clusters", "lanes", "match_result", "sfm_ingest",
         "gsp", "gt_map", "map_error", "manifest")


class SchemaError(ValueError):
    pass


def envelope(kind: str, body: dict) -> dict:
    if kind not in KINDS:
        raise SchemaError(f"unknown document kind {kind!r}")
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **body}


def check(doc: Any, kind: str | Sequence[str]) -> dict:
    """Validate the envelope and return the document."""
    kinds = (kind,) if isinstance(kind, str) else tuple(kind)
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    version = doc.get("schema_version")
    if not isinstance(version, str) or "." not in version:
        raise SchemaError("missing or malformed schema_version")
    try:
        major = int(version.split(".", 1)[0])
    except ValueError as exc:
        raise SchemaError(f"malformed schema_version {version!r}") from exc
    if major > SUPPORTED_MAJOR:
        raise SchemaError(f"schema_version {version} is newer than supported {SCHEMA_VERSION}")
    if doc.get("kind") not in kinds:
        raise SchemaError(f"expected a {' or '.join(kinds)} document, got {doc.get('kind')!r}")
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write(path: str | Path, doc: dict) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read(path: str | Path, kind: str | Sequence[str] | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if kind is None:
        kind = KINDS
    return check(doc, kind)


# -- scene ------------------------------------------------------------------

def scene_to_doc(scene: Scene) -> dict:
    return envelope("scene", scene.to_dict())


def scene_from_doc(doc: dict) -> Scene:
    check(doc, "scene")
    return Scene.from_dict(doc)


# -- pipeline result --------------------------------------------------------

def _point_row(p: DecodedPoint) -> list:
    return [p.x, p.y, p.z, p.lane_type.value, p.direction[0], p.direction[1]]


def _point_from_row(row: Sequence) -> DecodedPoint:
    x, y, z, t, dx, dy = row
    return DecodedPoint(float(x), float(y), float(z), LaneType(t), (float(dx), float(dy)))


def result_to_doc(result: PipelineResult) -> dict:
    return envelope("pipeline_result", {
        "image_size": list(result.image_size),
        "schedule": {"ratios": list(result.schedule.ratios), "crop_size": result.schedule.crop_size,
                     "max_crops_per_stage": result.schedule.max_crops_per_stage},
        "points": [_point_row(p) for p in result.points],
        "stage_stats": [s.to_dict() for s in result.stage_stats],
        "failed_crops": [{"stage": st, "crop": c.to_dict(), "error": e}
                         for st, c, e in result.failed_crops],
    })


def result_from_doc(doc: dict) -> PipelineResult:
    check(doc, "pipeline_result")
    sch = doc["schedule"]
    return PipelineResult(
        points=[_point_from_row(r) for r in doc["points"]],
        stage_stats=[StageStats.from_dict(s) for s in doc["stage_stats"]],
        image_size=tuple(doc["image_size"]),
        schedule=ZoomSchedule(tuple(sch["ratios"]), sch["crop_size"], sch["max_crops_per_stage"]),
        failed_crops=[(f["stage"], CropSpec.from_dict(f["crop"]), f["error"])
                      for f in doc.get("failed_crops", [])],
    )


# -- clusters ---------------------------------------------------------------

def clusters_to_doc(points: Sequence[DecodedPoint], labels: Sequence[int],
                    image_size: Sequence[int] | None = None) -> dict:
    return envelope("clusters", {
        "image_size": list(image_size) if image_size is not None else None,
        "points": [_point_row(p) for p in points],
        "labels": [int(v) for v in labels],
    })


def clusters_from_doc(doc: dict) -> tuple[list[DecodedPoint], np.ndarray, tuple | None]:
    check(doc, "clusters")
    points = [_point_from_row(r) for r in doc["points"]]
    labels = np.asarray(doc["labels"], dtype=int)
    if len(labels) != len(points):
        raise SchemaError("labels and points differ in length")
    size = doc.get("image_size")
    return points, labels, tuple(size) if size else None


# -- lanes ------------------------------------------------------------------

def lane_to_dict(lane: DetectedLane) -> dict:
    c = lane.curve
    return {
        "coefficients": list(c.coefficients), "axis": c.axis, "param_range": list(c.param_range),
        "frame": list(c.frame) if c.frame is not None else None,
        "type": lane.lane_type.value, "support": lane.support,
        "rms_residual": lane.rms_residual, "cluster_id": lane.cluster_id,
    }


def lane_from_dict(d: dict) -> DetectedLane:
    frame = d.get("frame")
    curve = CubicPolynomialLine(tuple(d["coefficients"]), d.get("axis", "y"),
                                tuple(d["param_range"]), tuple(frame) if frame else None)
    return DetectedLane(curve, LaneType(d.get("type", "WhiteSolid")), int(d.get("support", 0)),
                        float(d.get("rms_residual", 0.0)), int(d.get("cluster_id", -1)))


def lanes_to_doc(lanes: Sequence[DetectedLane], space: str = "image",
                 image_size: Sequence[int] | None = None, skipped: Sequence[str] = ()) -> dict:
    if space not in ("image", "world"):
        raise SchemaError("space must be 'image' or 'world'")
    body = {"space": space, "image_size": list(image_size) if image_size is not None else None,
            "lanes": [lane_to_dict(l) for l in lanes]}
    if skipped:
        body["skipped_shots"] = list(skipped)
    return envelope("lanes", body)


def lanes_from_doc(doc: dict) -> list[DetectedLane]:
    check(doc, "lanes")
    return [lane_from_dict(d) for d in doc["lanes"]]


# -- match results / map error ---------------------------------------------

def match_to_doc(metric: str, result, params: dict) -> dict:
    return envelope("match_result", {"metric": metric, "params": params, **result.to_dict(),
                                     "pairs": [list(p) for p in result.pairs]})


def map_error_to_doc(report) -> dict:
    return envelope("map_error", report.to_dict())


# -- hd map inputs ----------------------------------------------------------

def gt_map_to_doc(gt: GroundTruthMap) -> dict:
    return envelope("gt_map", {"lanes": [
        {"points": lane.polyline.vertices.tolist(), "type": lane.lane_type.value}
        for lane in gt.lanes]})


def gt_map_from_doc(doc: dict) -> GroundTruthMap:
    check(doc, "gt_map")
    lanes = [MapLane(Polyline(np.asarray(d["points"], dtype=float)), LaneType(d.get("type", "WhiteSolid")))
             for d in doc["lanes"]]
    if not lanes:
        raise SchemaError("ground-truth map has no lanes")
    return GroundTruthMap(lanes)


def _intrinsics_dict(k: CameraIntrinsics) -> dict:
    return {"focal": k.focal, "principal_point": list(k.principal_point),
            "image_size": list(k.image_size)}


def shot_to_dict(shot: Shot) -> dict:
    return {
        "id": shot.id,
        "pose": {"rotation": shot.pose.rotation.tolist(), "position": shot.pose.position.tolist()},
        "intrinsics": _intrinsics_dict(shot.intrinsics),
        "detections": [lane_to_dict(l) for l in shot.detections],
    }


def shot_from_dict(d: dict, base_dir: Path | None = None) -> Shot:
    k = d["intrinsics"]
    intr = CameraIntrinsics(float(k["focal"]), tuple(k["principal_point"]), tuple(k["image_size"]))
    pose = ShotPose(np.asarray(d["pose"]["position"], float), np.asarray(d["pose"]["rotation"], float))
    if "detections_file" in d:
        path = Path(d["detections_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        detections = lanes_from_doc(read(path, "lanes"))
    else:
        detections = [lane_from_dict(x) for x in d.get("detections", [])]
    return Shot(str(d["id"]), pose, intr, None, detections)


def ingest_to_doc(shots: Sequence[Shot], points: np.ndarray, ground: np.ndarray,
                  observers: Sequence[Sequence[str]] | None = None) -> dict:
    """SfM ingest: shots plus world-frame 3D points with ground labels."""
    pts = []
    for i, (p, g) in enumerate(zip(np.asarray(points, float), np.asarray(ground, bool))):
        item = {"xyz": p.tolist(), "ground": bool(g)}
        if observers is not None:
            item["shots"] = list(observers[i])
        pts.append(item)
    return envelope("sfm_ingest", {"shots": [shot_to_dict(s) for s in shots], "points": pts})


def ingest_from_doc(doc: dict, base_dir: Path | None = None) -> tuple[list[Shot], list[dict]]:
    check(doc, "sfm_ingest")
    shots = [shot_from_dict(d, base_dir) for d in doc["shots"]]
    ids = [s.id for s in shots]
    if len(set(ids)) != len(ids):
        raise SchemaError("shot ids must be unique")
    return shots, list(doc.get("points", []))


def gsp_to_doc(estimates: dict[str, GroundSurfaceParams | None], errors: dict[str, str]) -> dict:
    return envelope("gsp", {
        "shots": {sid: (None if g is None else {"angle": g.angle, "height": g.height})
                  for sid, g in sorted(estimates.items())},
        "failed": {sid: errors[sid] for sid in sorted(errors)},
    })


def gsp_from_doc(doc: dict) -> dict[str, GroundSurfaceParams | None]:
    check(doc, "gsp")
    return {sid: (None if g is None else GroundSurfaceParams(float(g["angle"]), float(g["height"])))
            for sid, g in doc["shots"].items()}

