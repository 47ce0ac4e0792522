import numpy as np
import pytest

from src.core.geometry import PointXY
from src.core.lane_enrichment import (
    EnrichedMap,
    LaneAssociation,
    LaneMarking,
    LanePoint,
    LaneSource,
    LineType,
    associate_lane,
    build_enriched_map,
    lane_from_bspline,
    lane_from_polyline,
    lane_point_matches,
    sample_bspline,
)
from src.core.road_graph import RoadClass, RoadGraph
from src.utils.errors import DuplicateLane, InvalidSpline, MapFormatError, UnknownRoad
from tests.conftest import make_road, straight_lane


@pytest.fixture
def ramp_graph():
    """Main road 1 along y = 0 and a ramp 2 diverging from its start at a small angle."""
    return RoadGraph([
        make_road(1, [(0, 0), (200, 0)]),
        make_road(2, [(0, 0), (40, -6), (200, -6)], RoadClass.EXPRESSWAY, 1),
    ])


def test_sample_bspline_on_a_straight_control_polygon():
    control = [PointXY(0.0, 0.0), PointXY(10.0, 0.0), PointXY(20.0, 0.0), PointXY(30.0, 0.0)]
    samples = sample_bspline(control, 1.0, LineType.DASHED)
    assert len(samples) == 31
    assert samples[0].position.x == pytest.approx(0.0, abs=1e-9)
    assert samples[-1].position.x == pytest.approx(30.0, abs=1e-6)
    assert all(s.heading == pytest.approx(90.0) for s in samples)
    assert all(s.line_type is LineType.DASHED for s in samples)
    spacing = np.diff([s.position.x for s in samples])
    assert np.all((spacing >= 0.2) & (spacing <= 1.0 + 1e-6))


def test_bspline_lane_from_curved_control_polygon():
    control = [PointXY(0.0, 0.0), PointXY(20.0, 0.0), PointXY(40.0, 10.0), PointXY(60.0, 30.0)]
    lane = lane_from_bspline(5, control, 2.0)
    assert lane.source is LaneSource.BSPLINE
    spacing = np.hypot(*np.diff(lane.coords, axis=0).T)
    assert spacing.max() <= 2.0 + 1e-3
    # Tangent turns from east towards north-east
    assert lane.points[0].heading == pytest.approx(90.0, abs=1e-6)
    assert lane.points[-1].heading < 60.0


def test_bspline_validation():
    with pytest.raises(InvalidSpline):
        sample_bspline([PointXY(0.0, 0.0), PointXY(1.0, 0.0), PointXY(2.0, 0.0)], 1.0)
    control = [PointXY(0.0, 0.0), PointXY(10.0, 0.0), PointXY(20.0, 0.0), PointXY(30.0, 0.0)]
    with pytest.raises(InvalidSpline):
        sample_bspline(control, 0.1)


def test_lane_spacing_invariant():
    points = (LanePoint(PointXY(0.0, 0.0), 90.0, LineType.SOLID), LanePoint(PointXY(10.0, 0.0), 90.0, LineType.SOLID))
    with pytest.raises(MapFormatError):
        LaneMarking(1, points)
    with pytest.raises(MapFormatError):
        LaneMarking(1, points[:1])


def test_coarse_polyline_is_resampled_with_vertex_types():
    lane = lane_from_polyline(3, [
        (PointXY(0.0, 0.0), None, LineType.DASHED),
        (PointXY(10.0, 0.0), None, LineType.SOLID),
        (PointXY(20.0, 0.0), None, LineType.SOLID),
    ], 1.0)
    assert len(lane.points) == 21
    types = [p.line_type for p in lane.points]
    assert types[:10] == [LineType.DASHED] * 10
    assert types[10:] == [LineType.SOLID] * 11


def test_fine_polyline_keeps_points_and_derives_headings():
    raw = [(PointXY(float(x), 0.0), None, LineType.SOLID) for x in range(6)]
    lane = lane_from_polyline(4, raw, 1.0)
    assert [p.position for p in lane.points] == [p for p, _, _ in raw]
    assert all(p.heading == pytest.approx(90.0) for p in lane.points)


def test_single_road_association_is_certain():
    graph = RoadGraph([make_road(1, [(0, 0), (200, 0)])])
    associations = associate_lane(graph, straight_lane(10, 1.75))
    assert [(a.lane_id, a.road_id) for a in associations] == [(10, 1)]
    assert associations[0].probability == pytest.approx(1.0)


def test_association_follows_the_backtracked_path(ramp_graph):
    lane = straight_lane(20, -7.75, x0=50.0, x1=190.0)
    matches = lane_point_matches(ramp_graph, lane)
    assert len(matches) == len(lane.points)
    for road_id, dist in matches:
        assert abs(sum(dist.values()) - 1.0) < 1e-9
        assert road_id == 2
    associations = associate_lane(ramp_graph, lane, association_floor=0.0)
    assert [a.road_id for a in associations] == [2]
    assert associations[0].probability == max(dist[2] for _, dist in matches)
    assert [k for k, _ in associations[0].per_point] == list(range(len(lane.points)))


def test_association_floor_drops_weak_roads(ramp_graph):
    lane = straight_lane(20, -7.75, x0=50.0, x1=190.0)
    everything = associate_lane(ramp_graph, lane, association_floor=0.0)
    floored = associate_lane(ramp_graph, lane, association_floor=0.5)
    assert {a.road_id for a in floored} <= {a.road_id for a in everything}
    assert all(a.probability > 0.5 for a in floored)


def test_build_enriched_map(ramp_graph):
    lanes = [straight_lane(11, 1.75), straight_lane(20, -7.75, x0=50.0, x1=190.0)]
    enriched = build_enriched_map(ramp_graph, lanes)
    assert list(enriched.lanes) == [11, 20]
    assert len(enriched.sampled_cloud) == sum(len(lane.points) for lane in lanes)
    assert enriched.association_table[11][1] > 0.5
    assert enriched.lanes_near(PointXY(100.0, 1.0), 2.0) == [11]


def test_build_enriched_map_without_lanes(ramp_graph):
    enriched = build_enriched_map(ramp_graph, [])
    assert enriched.associations == []
    assert enriched.cloud_tree is None
    assert enriched.lanes_near(PointXY(0.0, 0.0), 10.0) == []


def test_duplicate_lane_ids(ramp_graph):
    with pytest.raises(DuplicateLane):
        build_enriched_map(ramp_graph, [straight_lane(1, 1.75), straight_lane(1, -1.75)])


def test_enriched_map_checks_references(ramp_graph):
    lane = straight_lane(1, 1.75)
    with pytest.raises(MapFormatError):
        EnrichedMap(ramp_graph, {1: lane}, [LaneAssociation(2, 1, 1.0)])
    with pytest.raises(UnknownRoad):
        EnrichedMap(ramp_graph, {1: lane}, [LaneAssociation(1, 99, 1.0)])


def split_roads():
    """Road 1 along y = 0 up to x = 100, where road 2 continues straight and ramp 3 bears right to y = -8."""
    return [
        make_road(1, [(0, 0), (100, 0)]),
        make_road(2, [(100, 0), (200, 0)]),
        make_road(3, [(100, 0), (140, -8), (200, -8)], RoadClass.EXPRESSWAY, 0),
    ]


def test_parallel_lanes_over_a_split_belong_to_several_roads():
    graph = RoadGraph(split_roads())
    lanes = [straight_lane(lane_id, y) for lane_id, y in ((1, 1.75), (2, -1.75), (3, -5.25))]
    enriched = build_enriched_map(graph, lanes)
    assert len(enriched.associations) >= 4
    roads = {lane_id: set(row) for lane_id, row in enriched.association_table.items()}
    assert roads[1] == {1, 2}
    assert roads[3] == {1, 3}


def test_association_does_not_depend_on_road_order():
    lane = straight_lane(3, -5.25)
    forward = associate_lane(RoadGraph(split_roads()), lane)
    backward = associate_lane(RoadGraph(list(reversed(split_roads()))), lane)
    assert [(a.lane_id, a.road_id) for a in forward] == [(a.lane_id, a.road_id) for a in backward]
    assert [a.probability for a in forward] == pytest.approx([a.probability for a in backward])


def test_lane_level_restricts_the_candidate_roads():
    graph = RoadGraph([
        make_road(1, [(0, 0), (200, 0)]),
        make_road(2, [(0, 1), (200, 1)], RoadClass.EXPRESSWAY, 1),
    ])
    points = [(PointXY(0.0, -2.0), None, LineType.SOLID), (PointXY(200.0, -2.0), None, LineType.SOLID)]
    unleveled = associate_lane(graph, lane_from_polyline(5, points, 1.0))
    assert [a.road_id for a in unleveled] == [1]
    elevated = associate_lane(graph, lane_from_polyline(5, points, 1.0, level=1))
    assert [a.road_id for a in elevated] == [2]
    assert associate_lane(graph, lane_from_polyline(5, points, 1.0, level=3)) == []
