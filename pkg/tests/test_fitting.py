import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanezoom.clustering import NOISE
from lanezoom.fitting import (FitParams, UnderdeterminedFit, _scaled_design, assign_type,
                              clusters_to_lanes, fit_cubic, local_coordinates, weighted_cubic)
from lanezoom.lp_field import DecodedPoint, LaneType
from oracles import normal_equation_residual, normal_equations_fit


def pts_on(coeffs, ys, z=1.0, lane_type=LaneType.WhiteSolid):
    xs = np.polynomial.polynomial.polyval(ys, coeffs)
    return [DecodedPoint(float(x), float(y), z, lane_type, (0.0, 1.0)) for x, y in zip(xs, ys)]


def orthogonality_residual(s, dep, w):
    _, (lo, hi, _, _, a) = weighted_cubic(s, dep, w)
    V, _, _ = _scaled_design(s, lo, hi)
    return normal_equation_residual(V, a, dep, w)


def test_constant_line():
    line = fit_cubic(pts_on([5.0], np.arange(10.0)))
    assert line.coefficients == pytest.approx((5.0, 0.0, 0.0, 0.0), abs=1e-9)
    assert line.axis == "y" and line.param_range == (0.0, 9.0)


def test_planted_cubic():
    true = np.array([1.0, 2.0, -0.01, 0.0001])
    line = fit_cubic(pts_on(true, np.linspace(0, 100, 50)))
    np.testing.assert_allclose(line.coefficients, true, rtol=1e-6)


def test_three_points_underdetermined():
    with pytest.raises(UnderdeterminedFit):
        fit_cubic(pts_on([1.0, 1.0], np.arange(3.0)))
    with pytest.raises(UnderdeterminedFit):
        fit_cubic([DecodedPoint(float(i), 5.0, 1.0, LaneType.Other, (1, 0)) for i in range(6)])


def test_matches_normal_equations_oracle():
    rng = np.random.default_rng(3)
    s = np.sort(rng.uniform(0, 1500, 80))
    dep = 400 + 0.3 * s + rng.normal(0, 2, 80)
    w = rng.choice([0.5, 1.0, 2.0, 4.0], 80)
    coeffs, _ = weighted_cubic(s, dep, w)
    ref = normal_equations_fit(s, dep, w)
    fitted = np.polynomial.polynomial.polyval(s, coeffs)
    assert np.max(np.abs(fitted - np.polynomial.polynomial.polyval(s, ref))) < 1e-8


def test_weights_pull_towards_high_zoom():
    ys = np.arange(0.0, 40.0)
    pts = pts_on([10.0], ys, z=1.0) + pts_on([12.0], ys, z=8.0)
    assert fit_cubic(pts).value(np.array([20.0]))[0] == pytest.approx(10 + 2 * 8 / 9, abs=1e-6)
    assert fit_cubic(pts, weighted=False).value(np.array([20.0]))[0] == pytest.approx(11.0, abs=1e-6)


@pytest.mark.parametrize("axis", ["x", "auto", "pca"])
def test_other_axes_on_horizontal_lane(axis):
    xs = np.linspace(0, 300, 40)
    pts = [DecodedPoint(float(x), float(50 + 0.1 * x), 1.0, LaneType.Other, (1, 0)) for x in xs]
    line = fit_cubic(pts, axis)
    s, dep = local_coordinates(line, np.array([(p.x, p.y) for p in pts]))
    assert np.max(np.abs(dep - line.value(s))) < 1e-9


def test_assign_type():
    T = LaneType
    assert assign_type([T.WhiteSolid, T.WhiteSolid, T.YellowDash]) is T.WhiteSolid
    assert assign_type([T.OcclusionOrGap] * 5 + [T.WhiteDash]) is T.WhiteDash
    assert assign_type([T.OcclusionOrGap] * 2) is T.OcclusionOrGap
    # ties resolve to the earlier enum member
    assert assign_type([T.YellowSolid, T.WhiteDash]) is T.WhiteDash
    with pytest.raises(ValueError):
        assign_type([])


def test_clusters_to_lanes_all_noise():
    pts = pts_on([1.0], np.arange(10.0))
    assert clusters_to_lanes(pts, [NOISE] * 10) == []


def test_clusters_to_lanes_collinear():
    (lane,) = clusters_to_lanes(pts_on([3.0, 0.5], np.arange(4.0)), [0, 0, 0, 0],
                                FitParams(min_support=0))
    assert lane.rms_residual < 1e-9 and lane.support == 4 and lane.cluster_id == 0


def test_clusters_to_lanes_count_rule():
    pts = (pts_on([1.0], np.arange(6.0)) + pts_on([50.0], np.arange(3.0))
           + pts_on([90.0, 0.2], np.arange(8.0)) + pts_on([150.0], np.arange(2.0)))
    labels = [0] * 6 + [1] * 3 + [2] * 8 + [NOISE] * 2
    lanes = clusters_to_lanes(pts, labels, FitParams(min_support=0))
    assert [l.cluster_id for l in lanes] == [0, 2]


def test_clusters_to_lanes_min_support():
    pts = pts_on([1.0], np.arange(60.0)) + pts_on([300.0, 0.1], np.arange(49.0))
    labels = [0] * 60 + [1] * 49
    assert [l.cluster_id for l in clusters_to_lanes(pts, labels)] == [0]
    assert [l.cluster_id for l in clusters_to_lanes(pts, labels, FitParams(min_support=49))] == [0, 1]
    with pytest.raises(ValueError):
        FitParams(min_support=-1)


@pytest.mark.parametrize("seed", range(10))
def test_orthogonality(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-500, 2000, 60)
    dep = rng.normal(0, 100, 60) + 0.001 * s ** 2
    w = rng.uniform(0.5, 16, 60)
    assert orthogonality_residual(s, dep, w) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4),
       st.floats(0, 1000), st.floats(50, 2000), st.integers(6, 60))
def test_on_curve_point_keeps_fit(scaled, lo, span, n):
    # planted in the scaled basis so coefficients stay well conditioned
    s = np.linspace(lo, lo + span, n)
    u = (s - (lo + span / 2)) / (span / 2)
    dep = np.polynomial.polynomial.polyval(u, scaled)
    base = fit_cubic([(d, y, 1.0) for d, y in zip(dep, s)])
    extra_s = lo + 0.37 * span
    extra = np.polynomial.polynomial.polyval((extra_s - (lo + span / 2)) / (span / 2), scaled)
    more = fit_cubic([(d, y, 1.0) for d, y in zip(dep, s)] + [(extra, extra_s, 2.0)])
    probe = np.linspace(lo, lo + span, 7)
    scale = 1 + np.max(np.abs(dep))
    assert np.max(np.abs(base.value(probe) - more.value(probe))) <= 1e-9 * scale
