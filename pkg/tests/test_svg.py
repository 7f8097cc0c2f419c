import xml.etree.ElementTree as ET

import numpy as np

from lanezoom.detector import SyntheticDetector
from lanezoom.geometry import BezierCurve, Polyline
from lanezoom.hdmap import GroundTruthMap, MapLane
from lanezoom.lp_field import LANE_TYPES, Lane, LaneType
from lanezoom.scene import Scene, double_line_scene
from lanezoom.svg import PALETTE, map_svg, pipeline_svg, scene_svg
from lanezoom.zoom import run

NS = "{http://www.w3.org/2000/svg}"


def parse(text):
    return ET.fromstring(text)


def test_empty_scene_has_only_frame():
    root = parse(scene_svg(Scene((640, 480))))
    children = list(root)
    assert len(children) == 1 and children[0].get("class") == "frame"
    assert root.get("width") == "660"


def test_palette_distinct_per_type():
    assert set(PALETTE) == set(LANE_TYPES)
    assert len(set(PALETTE.values())) == len(LANE_TYPES)


def test_every_type_drawn_in_its_colour():
    types = [t for t in LANE_TYPES if t is not LaneType.OcclusionOrGap]
    lanes = tuple(Lane(BezierCurve(((50.0 + 60 * i, 10.0), (50.0 + 60 * i, 400.0))), t)
                  for i, t in enumerate(types))
    root = parse(scene_svg(Scene((640, 480), lanes)))
    lines = root.findall(f"{NS}polyline")
    assert [(l.get("data-type"), l.get("stroke")) for l in lines] == [(t.value, PALETTE[t]) for t in types]
    gt_map = GroundTruthMap([MapLane(Polyline(np.array([[0.0, 0.0], [10.0, 0.0]])), LaneType.OcclusionOrGap)])
    (gap,) = parse(map_svg(gt=gt_map)).findall(f"{NS}polyline")
    assert gap.get("stroke") == PALETTE[LaneType.OcclusionOrGap]


def test_region_count_matches_stage_stats():
    scene = double_line_scene()
    result = run(SyntheticDetector(scene), scene.image_size)
    root = parse(pipeline_svg(result))
    rects = root.findall(f".//{NS}rect[@class='region']")
    assert len(rects) == sum(len(s.regions) for s in result.stage_stats) > 0
    assert len(root.findall(f".//{NS}circle")) == len(result.points)


def test_map_svg_flips_north_up():
    gt_map = GroundTruthMap([MapLane(Polyline(np.array([[0.0, 0.0], [10.0, 5.0]])))])
    (line,) = parse(map_svg(gt=gt_map)).findall(f"{NS}polyline")
    first, last = line.get("points").split()
    assert first == "0,50" and last == "100,0"


def test_output_is_deterministic():
    scene = double_line_scene()
    assert scene_svg(scene) == scene_svg(scene)
