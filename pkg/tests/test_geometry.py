import math

import numpy as np
import pytest

from src.core.geometry import (
    PointXY,
    Pose,
    bearing,
    heading_diff,
    lateral_offset,
    normalize_heading,
    offset_polyline,
    point_at_arc,
    project_onto_polyline,
    project_wgs84,
    resample_polyline,
    unproject_xy,
)
from src.utils.errors import InvalidCoordinate

ORIGIN = (31.2304, 121.4737)
ELBOW = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])


@pytest.mark.parametrize("theta, expected", [(-10.0, 350.0), (360.0, 0.0), (720.0, 0.0), (45.0, 45.0), (-1e-18, 0.0)])
def test_normalize_heading(theta, expected):
    assert normalize_heading(theta) == pytest.approx(expected)
    assert 0.0 <= normalize_heading(theta) < 360.0


def test_heading_diff_is_the_included_angle():
    assert heading_diff(350.0, 10.0) == pytest.approx(20.0)
    assert heading_diff(10.0, 350.0) == pytest.approx(20.0)
    assert heading_diff(0.0, 180.0) == pytest.approx(180.0)
    assert heading_diff(90.0, 90.0) == 0.0


def test_bearing_is_compass():
    assert bearing(0.0, 1.0) == pytest.approx(0.0)
    assert bearing(1.0, 0.0) == pytest.approx(90.0)
    assert bearing(0.0, -1.0) == pytest.approx(180.0)
    assert bearing(-1.0, 0.0) == pytest.approx(270.0)


def test_pose_heading_is_normalized():
    assert Pose(PointXY(0.0, 0.0), -90.0).heading == pytest.approx(270.0)


def test_point_rejects_non_finite_and_far_coordinates():
    with pytest.raises(InvalidCoordinate):
        PointXY(float("nan"), 0.0)
    with pytest.raises(InvalidCoordinate):
        PointXY(1e8, 0.0)


def test_projection_round_trip():
    assert project_wgs84(*ORIGIN, ORIGIN) == PointXY(0.0, 0.0)
    point = project_wgs84(31.2354, 121.4800, ORIGIN)
    lat, lon = unproject_xy(point, ORIGIN)
    assert lat == pytest.approx(31.2354, abs=1e-12)
    assert lon == pytest.approx(121.4800, abs=1e-12)
    # One millidegree of latitude is about 111 m
    assert project_wgs84(ORIGIN[0] + 0.001, ORIGIN[1], ORIGIN).y == pytest.approx(111.19, abs=0.01)


def test_projection_rejects_invalid_coordinates():
    with pytest.raises(InvalidCoordinate):
        project_wgs84(91.0, 0.0, (0.0, 0.0))
    with pytest.raises(InvalidCoordinate):
        project_wgs84(ORIGIN[0] + 2.0, ORIGIN[1], ORIGIN)


def test_project_onto_polyline_inside_segment():
    projection = project_onto_polyline(ELBOW, PointXY(5.0, 3.0))
    assert projection.distance == pytest.approx(3.0)
    assert projection.point == PointXY(5.0, 0.0)
    assert projection.road_heading == pytest.approx(90.0)
    assert projection.on_segment
    assert projection.arc_offset == pytest.approx(5.0)


def test_project_onto_polyline_second_segment_and_endpoints():
    projection = project_onto_polyline(ELBOW, PointXY(12.0, 5.0))
    assert projection.distance == pytest.approx(2.0)
    assert projection.road_heading == pytest.approx(0.0)
    assert projection.arc_offset == pytest.approx(15.0)

    before_start = project_onto_polyline(ELBOW, PointXY(-2.0, 0.0))
    assert not before_start.on_segment
    assert before_start.distance == pytest.approx(2.0)
    assert before_start.arc_offset == 0.0


def test_lateral_offset_extends_the_end_segments():
    line = np.array([[0.0, 0.0], [100.0, 0.0]])
    assert lateral_offset(line, PointXY(50.0, -2.0)) == pytest.approx((2.0, 0.0, 90.0))
    assert lateral_offset(line, PointXY(105.0, 1.75)) == pytest.approx((1.75, 5.0, 90.0))
    assert lateral_offset(line, PointXY(-3.0, 4.0)) == pytest.approx((4.0, 3.0, 90.0))


def test_point_at_arc_clamps_to_the_ends():
    point, heading = point_at_arc(ELBOW, 15.0)
    assert (point.x, point.y) == pytest.approx((10.0, 5.0))
    assert heading == pytest.approx(0.0)
    end, _ = point_at_arc(ELBOW, 100.0)
    assert (end.x, end.y) == pytest.approx((10.0, 10.0))


def test_offset_polyline_positive_is_left():
    shifted = offset_polyline(np.array([[0.0, 0.0], [10.0, 0.0]]), 2.0)
    np.testing.assert_allclose(shifted, [[0.0, 2.0], [10.0, 2.0]], atol=1e-12)
    corner = offset_polyline(ELBOW, -1.0)
    # Outer corner of a left turn keeps the offset to both legs
    np.testing.assert_allclose(corner[1], [11.0, -1.0], atol=1e-12)


def test_resample_polyline_uniform_spacing():
    points, headings = resample_polyline(np.array([[0.0, 0.0], [10.0, 0.0]]), 3.0)
    np.testing.assert_allclose(points[:, 0], [0.0, 3.0, 6.0, 9.0, 10.0])
    assert np.allclose(headings, 90.0)
    assert math.isclose(points[-1, 0], 10.0)
