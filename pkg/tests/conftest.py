from typing import Iterable, Optional, Sequence, Tuple

import pytest

from src.core.geometry import PointXY, Pose
from src.core.lane_enrichment import EnrichedMap, LaneAssociation, LineType, lane_from_polyline
from src.core.road_graph import Road, RoadClass, RoadGraph


def make_road(road_id: int, points: Sequence[Tuple[float, float]], road_class: RoadClass = RoadClass.ORDINARY,
              level: int = 0, successors: Optional[Tuple[int, ...]] = None) -> Road:
    return Road(road_id, tuple(PointXY(float(x), float(y)) for x, y in points), road_class, level, successors)


def straight_lane(lane_id: int, y: float, x0: float = 0.0, x1: float = 200.0,
                  line_type: LineType = LineType.SOLID, interval: float = 1.0):
    """Eastbound lane marking along y, resampled to `interval`."""
    return lane_from_polyline(lane_id, [(PointXY(x0, y), None, line_type), (PointXY(x1, y), None, line_type)],
                              interval)


def eastbound_poses(xs: Iterable[float], y: float) -> list:
    return [Pose(PointXY(float(x), y), 90.0) for x in xs]


@pytest.fixture
def chain_graph() -> RoadGraph:
    """
    1 -> 2 -> 4 -> 5 along y = 0 (100 m each) with 3 branching north at x = 100.
    """
    return RoadGraph([
        make_road(1, [(0, 0), (100, 0)]),
        make_road(2, [(100, 0), (200, 0)]),
        make_road(3, [(100, 0), (100, 100)]),
        make_road(4, [(200, 0), (300, 0)]),
        make_road(5, [(300, 0), (400, 0)]),
    ])


@pytest.fixture
def parallel_graph() -> RoadGraph:
    """Unconnected eastbound roads: ordinary 1 at y = 0 and expressway 2 at y = 5."""
    return RoadGraph([
        make_road(1, [(0, 0), (200, 0)]),
        make_road(2, [(0, 5), (200, 5)], RoadClass.EXPRESSWAY, 1),
    ])


@pytest.fixture
def split_enriched() -> EnrichedMap:
    """
    Main road 1 at y = 0 and an adjacent ramp 2 at y = -3.5. Markings: 11 solid
    at y = 1.75 (main), 12 dashed at y = -1.75 (shared), 21 solid at y = -5.25 (ramp).
    """
    graph = RoadGraph([
        make_road(1, [(0, 0), (200, 0)]),
        make_road(2, [(0, -3.5), (200, -3.5)], RoadClass.EXPRESSWAY, 1),
    ])
    lanes = [
        straight_lane(11, 1.75),
        straight_lane(12, -1.75, line_type=LineType.DASHED),
        straight_lane(21, -5.25),
    ]
    associations = [
        LaneAssociation(11, 1, 1.0),
        LaneAssociation(12, 1, 0.5),
        LaneAssociation(12, 2, 0.5),
        LaneAssociation(21, 2, 1.0),
    ]
    return EnrichedMap(graph, {lane.lane_id: lane for lane in lanes}, associations)
