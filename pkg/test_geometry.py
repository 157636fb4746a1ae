import numpy as np
import pytest

from app.errors import ConfigurationError, PlanningError
from app.geometry import (
    clip_polygon,
    intersection_area,
    point_segment_distance,
    points_in_polygon,
    polygon_area,
    rectangle_corners,
    segment_intersections,
)
from app.road import RoadBoundary, generate_road, save_track

UNIT = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def test_polygon_area_sign():
    assert polygon_area(UNIT) == 1.0
    assert polygon_area(UNIT[::-1]) == -1.0
    assert polygon_area(UNIT[:2]) == 0.0


def test_clip_and_intersection_area():
    shifted = [(x + 0.5, y + 0.5) for x, y in UNIT]
    assert intersection_area(UNIT, shifted) == pytest.approx(0.25)
    assert intersection_area(UNIT, [(x + 3, y) for x, y in UNIT]) == 0.0
    assert clip_polygon(UNIT, [(x + 3, y) for x, y in UNIT]) == []
    rect = rectangle_corners(0.0, 0.0, 0.3, 2.0, 1.0)
    assert polygon_area(rect) == pytest.approx(8.0)
    assert intersection_area(rect, rect[::-1]) == pytest.approx(8.0)


def test_points_in_polygon():
    inside = points_in_polygon(np.array([[0.5, 0.5], [1.5, 0.5], [0.5, -0.1]]), UNIT)
    assert inside.tolist() == [True, False, False]


def test_segment_intersections():
    p0, p1 = np.array([[0.0, 0.0]]), np.array([[2.0, 2.0]])
    q0, q1 = np.array([[0.0, 2.0], [5.0, 5.0]]), np.array([[2.0, 0.0], [6.0, 5.0]])
    np.testing.assert_allclose(segment_intersections(p0, p1, q0, q1), [[1.0, 1.0]])


def test_point_segment_distance():
    a = np.array([[0.0, 0.0], [10.0, 0.0]])
    b = np.array([[10.0, 0.0], [10.0, 10.0]])
    d = point_segment_distance(np.array([[5.0, 3.0], [12.0, 5.0], [-3.0, -4.0]]), a, b)
    np.testing.assert_allclose(d, [3.0, 2.0, 5.0])


def test_generated_road_is_deterministic(tmp_path):
    a = save_track(generate_road(42), tmp_path / "a.csv").read_bytes()
    b = save_track(generate_road(42), tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a != save_track(generate_road(43), tmp_path / "c.csv").read_bytes()


def test_generated_road_widths_and_arcs():
    road = generate_road(7, width_range=(3.0, 6.0))
    assert np.all((road.half_widths >= 3.0 - 1e-9) & (road.half_widths <= 6.0 + 1e-9))
    np.testing.assert_allclose(np.diff(road.s), 5.0, rtol=1e-9)
    arc = generate_road(0, n_stations=40, width_range=(4.0, 4.0), curvature=[0.02])
    heading = np.unwrap(np.arctan2(*np.diff(arc.centerline, axis=0).T[::-1]))
    np.testing.assert_allclose(np.diff(heading), 0.02, atol=1e-12)


def test_generator_rejects_degenerate_widths():
    with pytest.raises(ConfigurationError):
        generate_road(0, width_range=(5.0, 3.0))
    with pytest.raises(ConfigurationError):
        generate_road(0, width_range=(0.5, 3.0))


def test_road_queries():
    road = generate_road(0, n_stations=25, width_range=(4.0, 4.0), curvature=[0.0])
    _, s, lateral = road.nearest_station((30.0, 1.5))
    assert (s, lateral) == pytest.approx((30.0, 1.5))
    assert road.lateral_margin((30.0, 1.5)) == pytest.approx(2.5)
    assert road.contains(np.array([[30.0, 1.5], [30.0, 5.0]])).tolist() == [True, False]
    np.testing.assert_allclose(road.signed_distance(np.array([[30.0, 1.5], [30.0, 5.0]])), [2.5, -1.0])
    seg = road.segment(20.0, 50.0)
    assert seg.length == pytest.approx(30.0)
    with pytest.raises(PlanningError):
        road.segment(50.0, 20.0)


def test_closed_road_must_close():
    left = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
    right = left - [0.0, 2.0]
    with pytest.raises(ConfigurationError):
        RoadBoundary(left, right, closed=True)
