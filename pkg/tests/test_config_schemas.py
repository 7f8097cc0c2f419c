import json

import numpy as np
import pytest

from lanezoom import schemas
from lanezoom.config import ConfigError, PipelineConfig
from lanezoom.detector import SyntheticDetector
from lanezoom.clustering import dbscan
from lanezoom.fitting import clusters_to_lanes
from lanezoom.hdmap import GroundSurfaceParams, map_error, merge_lanes, simulate_road
from lanezoom.metrics import line_match_f1
from lanezoom.scene import double_line_scene, random_scene
from lanezoom.zoom import ZoomSchedule, run


def roundtrip(doc):
    return json.loads(schemas.dumps(doc))


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.field.stride == 8.0
    assert cfg.field.stroke_width == 32.0
    assert cfg.field.confidence_separation == 46.0
    assert cfg.metrics.pixel_thickness == 40.0
    assert cfg.metrics.iou_width == 30.0 and cfg.metrics.iou_threshold == 0.5
    assert cfg.metrics.dis_thresh == 40.0 and cfg.metrics.area_thresh_factor == 1.0
    assert cfg.schedule.ratios[0] == 0.5 and cfg.schedule.ratios[-1] == 16.0
    assert cfg.schedule.max_crops_per_stage == 64


def test_config_round_trip_and_digest():
    cfg = PipelineConfig().merged({"field": {"stride": 4}, "schedule": {"ratios": [0.5, 2.0]}, "seed": 9})
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest() != PipelineConfig().digest()
    assert cfg.schedule.ratios == (0.5, 2.0) and cfg.field.stride == 4.0


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"field": {"strides": 8}},
    {"field": {"stride": "8"}},
    {"cluster": {"min_pts": 2.5}},
    {"use_context": 1},
    {"schedule": {"ratios": [2.0, 1.0]}},
    {"field": 3},
])
def test_config_rejects_bad_input(bad):
    with pytest.raises(ConfigError):
        PipelineConfig().merged(bad)


def test_envelope_versions():
    doc = schemas.scene_to_doc(double_line_scene())
    assert doc["schema_version"] == "1.0" and doc["kind"] == "scene"
    schemas.check(dict(doc, schema_version="1.7"), "scene")
    with pytest.raises(schemas.SchemaError):
        schemas.check(dict(doc, schema_version="2.0"), "scene")
    with pytest.raises(schemas.SchemaError):
        schemas.check(dict(doc, schema_version="one"), "scene")
    with pytest.raises(schemas.SchemaError):
        schemas.check(doc, "lanes")
    with pytest.raises(schemas.SchemaError):
        schemas.envelope("nonsense", {})


def test_read_rejects_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(schemas.SchemaError):
        schemas.read(p)


def test_scene_round_trip():
    scene = random_scene(3)
    assert schemas.scene_from_doc(roundtrip(schemas.scene_to_doc(scene))) == scene


@pytest.fixture(scope="module")
def small_run():
    scene = double_line_scene()
    result = run(SyntheticDetector(scene), scene.image_size, ZoomSchedule(ratios=(0.5, 2.0, 4.0)))
    labels = dbscan(result.points)
    lanes = clusters_to_lanes(result.points, labels)
    assert len(lanes) == 2
    return result, labels, lanes


def test_pipeline_result_round_trip(small_run):
    result, _, _ = small_run
    back = schemas.result_from_doc(roundtrip(schemas.result_to_doc(result)))
    assert back.points == result.points
    assert [s.to_dict() for s in back.stage_stats] == [s.to_dict() for s in result.stage_stats]
    assert back.schedule == result.schedule and back.image_size == result.image_size


def test_clusters_and_lanes_round_trip(small_run):
    result, labels, lanes = small_run
    pts, lab, size = schemas.clusters_from_doc(roundtrip(schemas.clusters_to_doc(result.points, labels, (2048, 1536))))
    assert pts == result.points and lab.tolist() == labels.tolist() and size == (2048, 1536)
    back = schemas.lanes_from_doc(roundtrip(schemas.lanes_to_doc(lanes, "image", (2048, 1536))))
    assert back == lanes
    with pytest.raises(schemas.SchemaError):
        schemas.lanes_to_doc(lanes, "screen")


def test_cluster_length_mismatch(small_run):
    result, labels, _ = small_run
    doc = roundtrip(schemas.clusters_to_doc(result.points, labels))
    doc["labels"] = doc["labels"][:-1]
    with pytest.raises(schemas.SchemaError):
        schemas.clusters_from_doc(doc)


def test_match_doc(small_run):
    _, _, lanes = small_run
    scene = double_line_scene()
    doc = roundtrip(schemas.match_to_doc("line-match", line_match_f1(scene.lanes, lanes), {"dis_thresh": 40}))
    assert doc["kind"] == "match_result" and doc["f1"] == 1.0 and doc["pairs"] == [[0, 0], [1, 1]]


def test_hd_map_documents_round_trip(tmp_path):
    cap = simulate_road([0.0, 10.0], 0)
    gt = schemas.gt_map_from_doc(roundtrip(schemas.gt_map_to_doc(cap.gt_map)))
    assert all(np.array_equal(a.polyline.vertices, b.polyline.vertices)
               for a, b in zip(gt.lanes, cap.gt_map.lanes))
    pts = np.vstack(list(cap.ground_points.values()))
    doc = roundtrip(schemas.ingest_to_doc(cap.shots, pts, np.ones(len(pts), bool)))
    shots, points = schemas.ingest_from_doc(doc)
    assert len(points) == len(pts)
    for a, b in zip(shots, cap.shots):
        assert a.id == b.id and a.detections == b.detections and a.intrinsics == b.intrinsics
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.position, b.pose.position)
    est = {s.id: s.gsp for s in cap.shots}
    est["broken"] = None
    back = schemas.gsp_from_doc(roundtrip(schemas.gsp_to_doc(est, {"broken": "collinear"})))
    assert back == est
    report = map_error(merge_lanes(cap.shots), cap.gt_map)
    assert roundtrip(schemas.map_error_to_doc(report))["mean_error"] == report.mean_error


def test_ingest_with_detection_files(tmp_path):
    cap = simulate_road([0.0], 0)
    shot = cap.shots[0]
    schemas.write(tmp_path / "det.json", schemas.lanes_to_doc(shot.detections))
    d = schemas.shot_to_dict(shot)
    del d["detections"]
    d["detections_file"] = "det.json"
    doc = schemas.envelope("sfm_ingest", {"shots": [d], "points": []})
    (back,), _ = schemas.ingest_from_doc(roundtrip(doc), tmp_path)
    assert back.detections == shot.detections
    dup = schemas.envelope("sfm_ingest", {"shots": [schemas.shot_to_dict(shot)] * 2, "points": []})
    with pytest.raises(schemas.SchemaError):
        schemas.ingest_from_doc(dup)


def test_empty_gt_map_rejected():
    with pytest.raises(schemas.SchemaError):
        schemas.gt_map_from_doc(schemas.envelope("gt_map", {"lanes": []}))


def test_gsp_doc_values():
    doc = schemas.gsp_to_doc({"a": GroundSurfaceParams(0.05, 1.5)}, {})
    assert doc["shots"] == {"a": {"angle": 0.05, "height": 1.5}} and doc["failed"] == {}


def test_dumps_is_canonical():
    a = schemas.dumps({"b": 1, "a": [1.5, 2]})
    assert a == schemas.dumps({"a": [1.5, 2], "b": 1}) and a.endswith("\n")
    with pytest.raises(ValueError):
        schemas.dumps({"x": float("nan")})
