import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_hough
from pvscan.edgedetect import EdgeMap
from pvscan.errors import InputError, NoPanels, Parallel
from pvscan.houghgrid import (GridModel, LineRT, PanelQuad, angular_distance, find_peaks,
                              fit_grid, group_lines, hough_accumulate, hough_lines,
                              line_intersection, prominent_panel_index, select_prominent_panel)
from pvscan.imagery import GrayImage

DEG = math.pi / 180


def edge_map(points, size=5):
    e = np.zeros((size, size), bool)
    for x, y in points:
        e[y, x] = True
    return EdgeMap(e)


@pytest.mark.parametrize("points,rho,theta_deg", [
    ([(2, y) for y in range(5)], 2.0, 0),
    ([(x, 3) for x in range(5)], 3.0, 90),
    ([(i, i) for i in range(5)], 0.0, 135),
])
def test_single_line_peaks(points, rho, theta_deg):
    lines = hough_lines(edge_map(points), 1.0, DEG, vote_threshold=5)
    assert lines[0].votes == 5
    assert lines[0].rho == pytest.approx(rho, abs=1e-12)
    assert lines[0].theta == pytest.approx(theta_deg * DEG, abs=1e-12)


def test_diagonal_bin_matches_brute_force():
    e = edge_map([(i, i) for i in range(5)])
    acc = hough_accumulate(e, 1.0, DEG)
    oracle = brute_hough(e.edges, 1.0, DEG)
    assert np.array_equal(acc.votes, oracle)
    assert acc.votes[135, acc.rho_offset] == 5


def test_accumulator_covers_diagonal():
    acc = hough_accumulate(EdgeMap(np.zeros((30, 40), bool)), 1.0, DEG)
    assert acc.rho_at(0) <= -50 and acc.rho_at(acc.rho_bins - 1) >= 50
    assert acc.theta_bins == 180


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))),
       st.sampled_from([0.5, 1.0, 2.0]), st.sampled_from([1.0, 3.0, 7.5]))
def test_accumulator_matches_oracle(e, rho_step, theta_deg):
    acc = hough_accumulate(EdgeMap(e), rho_step, theta_deg * DEG)
    oracle = brute_hough(e, rho_step, theta_deg * DEG)
    assert np.array_equal(acc.votes, oracle)
    assert acc.votes.sum() == e.sum() * acc.theta_bins


def test_empty_edges_no_lines():
    assert hough_lines(EdgeMap(np.zeros((8, 8), bool))) == []


def test_vote_threshold_validated():
    with pytest.raises(InputError):
        hough_lines(EdgeMap(np.zeros((3, 3), bool)), vote_threshold=0)


@settings(max_examples=30, deadline=None)
@given(arrays(bool, st.tuples(st.integers(3, 12), st.integers(3, 12))))
def test_peaks_dominate_neighbourhood(e):
    acc = hough_accumulate(EdgeMap(e), 1.0, 4 * DEG)
    peaks = find_peaks(acc, 1)
    v = acc.votes
    for ln in peaks:
        k = int(round(ln.theta / acc.theta_step))
        j = int(round(ln.rho / acc.rho_step)) + acc.rho_offset
        for dk in (-1, 0, 1):
            for dj in (-1, 0, 1):
                kk, jj = k + dk, j + dj
                if kk < 0 or kk >= acc.theta_bins:
                    kk, jj = kk % acc.theta_bins, 2 * acc.rho_offset - jj
                if 0 <= jj < acc.rho_bins:
                    assert v[k, j] >= v[kk, jj]
    assert [p.votes for p in peaks] == sorted((p.votes for p in peaks), reverse=True)


def test_group_weighted_mean():
    out = group_lines([LineRT(10, 0, 100), LineRT(12, 0.02, 50)], 2 * DEG, 10)
    assert len(out) == 1
    assert out[0].rho == pytest.approx(32 / 3, abs=1e-3)
    assert out[0].theta == pytest.approx(0.02 / 3, abs=1e-5)
    assert out[0].votes == 150


def test_group_single_and_far_lines():
    one = LineRT(5, 0.3, 9)
    assert group_lines([one]) == [one]
    a, b = LineRT(0, 1.0, 10), LineRT(30, 1.0, 10)
    assert set(group_lines([a, b], 2 * DEG, 10)) == {a, b}


def test_group_across_theta_wrap():
    # theta = 179.5 deg with rho -20 is the same line as theta = -0.5 deg with rho 20
    out = group_lines([LineRT(20, 0.5 * DEG, 10), LineRT(-20, 179.5 * DEG, 10)], 2 * DEG, 10)
    assert len(out) == 1
    ln = out[0]
    assert angular_distance(ln.theta, 0.0) < 1e-9
    assert abs(ln.rho) == pytest.approx(20)


line_st = st.builds(LineRT, st.floats(-100, 100), st.floats(0, math.pi - 1e-6),
                    st.integers(1, 100))


@settings(max_examples=60, deadline=None)
@given(st.lists(line_st, max_size=8))
def test_group_idempotent_and_conserves_votes(lines):
    once = group_lines(lines, 2 * DEG, 10)
    assert sum(ln.votes for ln in once) == sum(ln.votes for ln in lines)
    assert group_lines(once, 2 * DEG, 10) == once
    assert all(0 <= ln.theta < math.pi for ln in once)


@pytest.mark.parametrize("a,b,pt", [
    (LineRT(2, 0), LineRT(3, math.pi / 2), (2, 3)),
    (LineRT(0, 0), LineRT(0, math.pi / 2), (0, 0)),
])
def test_intersection(a, b, pt):
    assert line_intersection(a, b) == pytest.approx(pt, abs=1e-12)


def test_parallel():
    with pytest.raises(Parallel):
        line_intersection(LineRT(1, 0), LineRT(2, 0))


@settings(max_examples=60, deadline=None)
@given(line_st, line_st)
def test_intersection_lies_on_both(a, b):
    assume(angular_distance(a.theta, b.theta) > 0.05)
    x, y = line_intersection(a, b)
    assert abs(a.distance(x, y)) < 1e-7 and abs(b.distance(x, y)) < 1e-7


def grid_lines(xs, ys):
    return [LineRT(x, 0, 10) for x in xs] + [LineRT(y, math.pi / 2, 10) for y in ys]


def test_fit_grid_counts():
    g = fit_grid(grid_lines([0, 10, 20], [0, 10, 20]))
    assert (len(g.corners), len(g.panels)) == (9, 4)
    g = fit_grid(grid_lines([0, 10, 20, 30], [0, 10, 20]))
    assert (len(g.corners), len(g.panels)) == (12, 6)
    g = fit_grid(grid_lines([0, 10, 20], []))
    assert (len(g.corners), len(g.panels)) == (0, 0)


def test_fit_grid_orders_panels_row_major():
    g = fit_grid(grid_lines([20, 0, 10], [10, 0]))
    assert [ln.rho for ln in g.family_a] == [0, 10, 20]
    np.testing.assert_allclose(g.panels[0].corners, [(0, 0), (10, 0), (10, 10), (0, 10)],
                               atol=1e-9)
    np.testing.assert_allclose(g.panels[1].corners[0], (10, 0), atol=1e-9)


def test_fit_grid_drops_lines_outside_split():
    lines = grid_lines([0, 10], [0, 10]) + [LineRT(5, 45 * DEG, 99)]
    g = fit_grid(lines)
    assert len(g.lines) == 4


def test_fit_grid_handles_vertical_near_pi():
    # theta just below pi describes a vertical line at x = -rho
    g = fit_grid([LineRT(-10, math.pi - 0.01, 5), LineRT(0, 0, 5),
                  LineRT(0, math.pi / 2, 5), LineRT(10, math.pi / 2, 5)])
    assert [round(line_intersection(a, g.family_b[0])[0]) for a in g.family_a] == [0, 10]


def test_fit_grid_clips_far_corners():
    g = fit_grid(grid_lines([0, 10, 500], [0, 10]), width=100, height=100)
    assert len(g.corners) == 4
    assert len(g.panels) == 2


def test_fit_grid_validates_split():
    with pytest.raises(InputError):
        fit_grid([], split_angle=math.pi / 2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=0, max_size=5, unique=True),
       st.lists(st.floats(-50, 50), min_size=0, max_size=5, unique=True))
def test_fit_grid_combinatorics(xs, ys):
    g = fit_grid(grid_lines(xs, ys))
    assert len(g.panels) == max(0, len(xs) - 1) * max(0, len(ys) - 1)
    assert len(g.corners) == len(xs) * len(ys)


def test_panel_quad_from_points_orders_corners():
    q = PanelQuad.from_points([(10, 10), (0, 0), (0, 10), (10, 0)])
    assert q.corners == ((0, 0), (10, 0), (10, 10), (0, 10))
    assert q.is_simple() and q.area == 100
    assert not PanelQuad(((0, 0), (10, 10), (10, 0), (0, 10))).is_simple()


def test_prominent_single_panel():
    quad = PanelQuad(((1, 1), (5, 1), (5, 5), (1, 5)))
    img = GrayImage(np.zeros((10, 10)))
    assert select_prominent_panel(GridModel(panels=[quad]), img) == quad


def test_prominent_prefers_largest_inside():
    img = GrayImage(np.zeros((100, 100)))
    small = PanelQuad(((40, 40), (60, 40), (60, 60), (40, 60)))  # 400 px^2
    big = PanelQuad(((0, 0), (40, 0), (40, 25), (0, 25)))  # 1000 px^2
    outside = PanelQuad(((-50, -50), (90, -50), (90, 90), (-50, 90)))
    assert select_prominent_panel(GridModel(panels=[small, big, outside]), img) == big


def test_prominent_tie_goes_to_centre():
    img = GrayImage(np.zeros((201, 201)))  # centre (100, 100)
    near = PanelQuad(((120, 90), (140, 90), (140, 110), (120, 110)))  # centroid 30 px off
    far = PanelQuad(((170, 90), (190, 90), (190, 110), (170, 110)))  # centroid 80 px off
    assert prominent_panel_index(GridModel(panels=[far, near]), img) == 1


def test_prominent_needs_panels():
    with pytest.raises(NoPanels):
        prominent_panel_index(GridModel(), GrayImage(np.zeros((3, 3))))


@pytest.mark.parametrize("dx", [1, 4, 9])
def test_translation_covariance(dx):
    base = hough_lines(edge_map([(3, y) for y in range(20)], size=20), vote_threshold=10)[0]
    moved = hough_lines(edge_map([(3 + dx, y) for y in range(20)], size=20), vote_threshold=10)[0]
    assert base.theta == moved.theta == 0.0
    assert abs(moved.rho - base.rho - dx) <= 1.0


def test_prominent_ignores_intensity():
    g = fit_grid(grid_lines([5, 25, 40], [5, 30]))
    a = np.random.default_rng(0).integers(0, 100, (50, 50))
    assert (prominent_panel_index(g, GrayImage(a))
            == prominent_panel_index(g, GrayImage(a * 2)) == 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(line_st, max_size=8))
def test_group_never_grows(lines):
    assert len(group_lines(lines, 2 * DEG, 10)) <= len(lines)
