import random

import numpy as np
import pytest

from lanezoom.clustering import dbscan, n_clusters
from lanezoom.detector import SyntheticDetector
from lanezoom.fitting import clusters_to_lanes
from lanezoom.geometry import Rect
from lanezoom.metrics import line_match_f1
from lanezoom.scene import NoiseModel, Scene, double_line_scene, random_scene, vertical_lane
from lanezoom.zoom import (Thresholds, ZoomSchedule, _canonical_points, initial_crops,
                           next_stage_crops, run)

SIZE = (2048, 1536)


@pytest.fixture(scope="module")
def double_run():
    return run(SyntheticDetector(double_line_scene(20.0)), SIZE)


def test_initial_crops_cover_image_without_much_overlap():
    crops = initial_crops(SIZE, ZoomSchedule())
    fov = 1024.0
    assert all(c.width == fov and c.zoom_ratio == 0.5 for c in crops)
    covered = np.zeros((SIZE[1] // 8, SIZE[0] // 8), dtype=int)
    for c in crops:
        x0, y0 = int(c.origin[0] // 8), int(c.origin[1] // 8)
        covered[y0:y0 + int(fov // 8), x0:x0 + int(fov // 8)] += 1
    assert covered.min() >= 1
    assert np.mean(covered > 1) <= 0.10


def test_small_image_single_crop():
    assert len(initial_crops((300, 200), ZoomSchedule())) == 1


def test_next_stage_crops():
    sch = ZoomSchedule()
    assert next_stage_crops([], 2.0, sch) == []
    (crop,) = next_stage_crops([Rect(100, 100, 150, 200)], 2.0, sch)
    assert crop.width == 256.0 and crop.zoom_ratio == 2.0
    assert crop.rect.x0 + crop.rect.x1 == pytest.approx(250.0)
    assert crop.rect.y0 + crop.rect.y1 == pytest.approx(300.0)
    wide = next_stage_crops([Rect(0, 0, 600, 100)], 2.0, sch)
    assert len(wide) == 3
    xs = sorted(c.origin[0] for c in wide)
    assert np.allclose(np.diff(xs), 256.0)
    assert xs[0] <= 0 and xs[-1] + 256 >= 600


def test_next_stage_crop_cap_and_ratio_check():
    sch = ZoomSchedule(max_crops_per_stage=2)
    assert len(next_stage_crops([Rect(0, 0, 2000, 2000)], 2.0, sch)) == 2
    with pytest.raises(ValueError):
        next_stage_crops([Rect(0, 0, 10, 10)], 3.0, ZoomSchedule())


def test_schedule_validation():
    with pytest.raises(ValueError):
        ZoomSchedule(ratios=(1.0, 0.5))
    with pytest.raises(ValueError):
        ZoomSchedule(ratios=(0.0, 1.0))


def test_thresholds_validation():
    with pytest.raises(ValueError):
        Thresholds(min_region_cells=0)


def test_noisy_detector_recovers_all_lanes():
    # isolated confidence flips must not use up the crop budget of later stages
    scene = random_scene(1)
    result = run(SyntheticDetector(scene, NoiseModel()), scene.image_size)
    lanes = clusters_to_lanes(result.points, dbscan(result.points))
    assert line_match_f1(scene.lanes, lanes).f1 == 1.0


def test_double_line_stage_zero_has_no_points_between(double_run):
    coarse = [p for p in double_run.points if p.z == 0.5]
    assert not any(900.0 < p.x < 920.0 for p in coarse)
    assert double_run.stage_stats[0].uncertain_regions >= 1
    assert len(double_run.stage_stats) >= 2


def test_double_line_gives_two_lanes(double_run):
    labels = dbscan(double_run.points)
    assert n_clusters(labels) == 2
    lanes = clusters_to_lanes(double_run.points, labels)
    xs = sorted(float(l.curve.value(np.array([768.0]))[0]) for l in lanes)
    assert xs == pytest.approx([900.0, 920.0], abs=1.0)


def test_isolated_lane_stops_after_thumbnail():
    scene = Scene(SIZE, (vertical_lane(600.0, 700.0, SIZE, bend=20.0),))
    result = run(SyntheticDetector(scene), SIZE)
    assert result.stopped_after == 0
    assert result.points and all(p.z == 0.5 for p in result.points)


def test_empty_scene():
    result = run(SyntheticDetector(Scene(SIZE)), SIZE)
    assert result.points == [] and result.stopped_after == 0


@pytest.mark.parametrize("seed", range(4))
def test_uncertain_area_non_increasing(seed):
    result = run(SyntheticDetector(random_scene(seed)), SIZE)
    areas = [s.uncertain_area for s in result.stage_stats]
    assert all(b <= a + 1e-9 for a, b in zip(areas, areas[1:]))


@pytest.mark.parametrize("seed", range(3))
def test_points_lie_on_true_lanes(seed):
    scene = random_scene(seed)
    result = run(SyntheticDetector(scene), SIZE)
    for p in result.points[::25]:
        d = min(np.min(np.hypot(*(l.curve.evaluate(np.linspace(0, 1, 20001)) - [p.x, p.y]).T))
                for l in scene.lanes)
        assert d < 0.2


def test_points_in_canonical_order(double_run):
    keys = [(p.y, p.x, p.z) for p in double_run.points]
    assert keys == sorted(keys)


def test_canonical_points_order_independent(double_run):
    pts = double_run.points
    chunks = [pts[i:i + 37] for i in range(0, len(pts), 37)]

    def parts(chs):
        return ([np.array([(p.x, p.y) for p in c]) for c in chs],
                [np.array([p.z for p in c]) for c in chs],
                [np.array([p.lane_type.index for p in c]) for c in chs],
                [np.array([p.direction for p in c]) for c in chs])

    shuffled = [list(c) for c in chunks]
    rng = random.Random(0)
    rng.shuffle(shuffled)
    for c in shuffled:
        rng.shuffle(c)
    assert _canonical_points(*parts(shuffled)) == _canonical_points(*parts(chunks))


class FlakyDetector:
    def __init__(self, inner):
        self.inner = inner

    def detect(self, crop, context=None):
        if crop.origin == (0.0, 0.0):
            raise RuntimeError("boom")
        return self.inner.detect(crop, context)


def test_failed_crops_are_recorded():
    result = run(FlakyDetector(SyntheticDetector(double_line_scene())), SIZE)
    assert len(result.failed_crops) == 1
    stage, crop, err = result.failed_crops[0]
    assert stage == 0 and crop.origin == (0.0, 0.0) and "boom" in err
    assert result.stage_stats[0].failures == 1
    assert result.points


def test_run_is_deterministic(double_run):
    again = run(SyntheticDetector(double_line_scene(20.0)), SIZE)
    assert again.points == double_run.points
