import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanezoom.geometry import BezierCurve, Polyline
from lanezoom.lp_field import Lane, LaneType
from lanezoom.metrics import (LineMatchParams, MatchResult, area_between, iou_f1, iou_matrix,
                              line_match_f1, line_match_pairs, pixel_f1, rasterize, score_pair)

SIZE = (400, 600)


def seg(x0, y0, x1, y1):
    return Polyline(np.array([[x0, y0], [x1, y1]], dtype=float))


def vertical(x, y0=100.0, y1=500.0):
    return seg(x, y0, x, y1)


def test_match_result_bookkeeping():
    r = MatchResult(3, 1, 2)
    assert r.precision == 0.75 and r.recall == 0.6
    assert r.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
    assert MatchResult(0, 0, 0).f1 == 0.0


def test_rasterize_strict_half_width():
    mask = rasterize([vertical(100.0)], 40.0, SIZE)
    row = mask[300]
    assert row[80] and row[119] and not row[79] and not row[120]


@pytest.mark.parametrize("metric", ["pixel", "iou", "line"])
def test_identical_and_disjoint(metric):
    gt = [vertical(100.0), vertical(250.0)]
    far = [vertical(390.0, 0.0, 50.0)]
    fn = {"pixel": lambda g, p: pixel_f1(g, p, image_size=SIZE),
          "iou": lambda g, p: iou_f1(g, p, image_size=SIZE),
          "line": lambda g, p: line_match_f1(g, p)}[metric]
    assert fn(gt, gt).f1 == 1.0
    assert fn(gt, far).f1 == 0.0


def test_pixel_offset_beyond_thickness():
    r = pixel_f1([vertical(100.0)], [vertical(140.0)], 40.0, SIZE)
    assert r.tp == 0 and r.f1 == 0.0


def test_iou_offset_example():
    # two 30 px strokes 15 px apart overlap on 15 of 45 columns
    ious = iou_matrix([vertical(100.0)], [vertical(115.0)], 30.0, SIZE)
    assert ious[0, 0] == pytest.approx(1 / 3, abs=0.01)
    r = iou_f1([vertical(100.0)], [vertical(115.0)], 30.0, 0.5, SIZE)
    assert (r.tp, r.fp, r.fn) == (0, 1, 1)


def test_iou_counts_with_extra_gt():
    r = iou_f1([vertical(100.0), vertical(250.0)], [vertical(100.0)], image_size=SIZE)
    assert (r.tp, r.fp, r.fn) == (1, 0, 1) and r.pairs == ((0, 0),)


def test_iou_validation():
    with pytest.raises(ValueError):
        iou_f1([vertical(1.0)], [vertical(1.0)], iou_threshold=0.0)
    with pytest.raises(ValueError):
        pixel_f1([], [], thickness=0.0)


def test_parallel_area():
    assert area_between(seg(0, 0, 100, 0), seg(0, 3, 100, 3)) == pytest.approx(300.0, abs=1.0)


@pytest.mark.parametrize("teeth,H,width", [(4, 5.0, 100.0), (10, 2.0, 300.0), (3, 20.0, 60.0)])
def test_triangle_wave_area(teeth, H, width):
    xs = np.linspace(0.0, width, 2 * teeth + 1)
    ys = np.where(np.arange(len(xs)) % 2 == 1, H, 0.0)
    wave = Polyline(np.column_stack([xs, ys]))
    k = H / (width / (2 * teeth))
    expected = H * width / 2 * np.sqrt(1 + k ** 2)
    assert area_between(wave, seg(-10, 0, width + 10, 0), step=0.01) == pytest.approx(expected, rel=1e-3)


def test_endpoint_failure_case():
    params = LineMatchParams(dis_thresh=40.0)
    r = line_match_f1([vertical(100.0)], [vertical(100.0, 150.0, 500.0)], params)
    assert r.tp == 0
    ok = line_match_f1([vertical(100.0)], [vertical(100.0, 130.0, 500.0)], params)
    assert ok.tp == 1


def box_bulge(L, D, x=100.0, y0=100.0):
    return Polyline(np.array([[x, y0], [x + D, y0], [x + D, y0 + L], [x, y0 + L]]))


def test_area_failure_case():
    # lateral distance min(D, y, L - y) integrates to L*D - D**2
    L, thr = 400.0, 40.0
    D = L / 2 - np.sqrt(L ** 2 / 4 - 1.5 * thr * L)
    gt = vertical(100.0, 100.0, 100.0 + L)
    s = score_pair(gt, box_bulge(L, D))
    assert s.endpoint_distances == (0.0, 0.0)
    assert s.area == pytest.approx(1.5 * thr * L, rel=1e-3)
    assert line_match_f1([gt], [box_bulge(L, D)], LineMatchParams(thr)).tp == 0
    small = L / 2 - np.sqrt(L ** 2 / 4 - 0.5 * thr * L)
    assert line_match_f1([gt], [box_bulge(L, small)], LineMatchParams(thr)).tp == 1


def test_reversed_prediction_matches():
    r = line_match_f1([vertical(100.0)], [seg(100, 500, 100, 100)])
    assert r.tp == 1


def test_type_check():
    a = Lane(BezierCurve(((100.0, 100.0), (100.0, 500.0))), LaneType.WhiteSolid)
    b = Lane(BezierCurve(((100.0, 100.0), (100.0, 500.0))), LaneType.YellowDash)
    assert line_match_f1([a], [b]).tp == 1
    assert line_match_f1([a], [b], LineMatchParams(check_type=True)).tp == 0


def test_matching_prefers_smaller_area():
    gt = [vertical(100.0)]
    pairs, scores = line_match_pairs(gt, [vertical(120.0), vertical(105.0)])
    assert pairs == [(0, 1)]
    assert scores[(0, 1)].area < scores[(0, 0)].area


def test_threshold_increase_keeps_both_matches():
    # a newly admissible low-area pair must not steal the partner of another lane
    gt = [Polyline(np.array([[106.895, 114.165], [108.483, 508.262]])),
          Polyline(np.array([[110.179, 74.099], [120.535, 539.336]]))]
    pred = [Polyline(np.array([[102.720, 117.529], [97.970, 489.423]])),
            Polyline(np.array([[106.587, 79.839], [110.501, 531.525]]))]
    assert line_match_f1(gt, pred, LineMatchParams(28.42)).tp == 2
    assert line_match_f1(gt, pred, LineMatchParams(41.06)).tp == 2


lines = st.lists(st.tuples(st.floats(20, 380), st.floats(20, 580), st.floats(20, 380), st.floats(20, 580))
                 .filter(lambda t: np.hypot(t[0] - t[2], t[1] - t[3]) > 5),
                 min_size=0, max_size=3).map(lambda ts: [seg(*t) for t in ts])


@settings(max_examples=15, deadline=None)
@given(lines, lines)
def test_pixel_swap_symmetry(gt, pred):
    a = pixel_f1(gt, pred, 40.0, SIZE)
    b = pixel_f1(pred, gt, 40.0, SIZE)
    assert (a.precision, a.recall, a.tp) == (b.recall, b.precision, b.tp)


@settings(max_examples=40, deadline=None)
@given(lines, lines, st.floats(1, 60), st.floats(1, 60))
def test_line_match_monotone_in_threshold(gt, pred, t1, t2):
    lo, hi = sorted((t1, t2))
    assert line_match_f1(gt, pred, LineMatchParams(lo)).tp <= line_match_f1(gt, pred, LineMatchParams(hi)).tp
