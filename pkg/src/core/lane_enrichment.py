import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial import cKDTree

from src.core.geometry import PointXY, Pose, bearing, polyline_array, resample_polyline
from src.core.hmm_matcher import EmissionParams, HmmMatcher, TransitionParams, backtrack, step_probabilities
from src.core.road_graph import RoadGraph
from src.utils.errors import DuplicateLane, InvalidSpline, MapFormatError, UnknownRoad
from src.utils.helpers import timed_operation

MIN_SAMPLE_SPACING = 0.2
MAX_SAMPLE_SPACING = 5.0
# Tolerance on the spacing invariant for float noise in resampled or rounded input
SPACING_SLACK = 1e-5
DEFAULT_ASSOCIATION_FLOOR = 0.05
LANE_EMISSION = EmissionParams(sigma=3.0, candidate_radius=20.0)


class LineType(Enum):
    SOLID = "solid"
    DASHED = "dashed"


class LaneSource(Enum):
    BSPLINE = "bspline"
    POLYLINE = "polyline"


@dataclass(frozen=True)
class LanePoint:
    position: PointXY
    heading: float
    line_type: LineType


@dataclass(frozen=True)
class LaneMarking:
    """A sampled, directed lane-marking polyline."""
    lane_id: int
    points: Tuple[LanePoint, ...]
    source: LaneSource = LaneSource.POLYLINE
    # Road level the marking lies on; None lets it match roads of any level
    level: Optional[int] = None

    def __post_init__(self):
        if len(self.points) < 2:
            raise MapFormatError(f"Lane {self.lane_id} needs at least 2 sample points")
        coords = polyline_array([p.position for p in self.points])
        spacing = np.hypot(*np.diff(coords, axis=0).T)
        if spacing.min() < MIN_SAMPLE_SPACING - SPACING_SLACK or spacing.max() > MAX_SAMPLE_SPACING + SPACING_SLACK:
            raise MapFormatError(
                f"Lane {self.lane_id} sample spacing must be within [{MIN_SAMPLE_SPACING}, {MAX_SAMPLE_SPACING}] m, "
                f"got [{spacing.min():.3f}, {spacing.max():.3f}]"
            )

    @cached_property
    def coords(self) -> np.ndarray:
        return polyline_array([p.position for p in self.points])

    def poses(self) -> List[Pose]:
        return [Pose(p.position, p.heading) for p in self.points]


@dataclass(frozen=True)
class LaneAssociation:
    lane_id: int
    road_id: int
    probability: float
    per_point: Optional[Tuple[Tuple[int, float], ...]] = None


@dataclass(frozen=True)
class CloudPoint:
    position: PointXY
    line_type: LineType
    lane_id: int


class EnrichedMap:
    """Road graph enriched with associated lane markings."""

    def __init__(self, graph: RoadGraph, lanes: Dict[int, LaneMarking], associations: Sequence[LaneAssociation]):
        self.graph = graph
        self.lanes = dict(sorted(lanes.items()))
        for assoc in associations:
            if assoc.lane_id not in self.lanes:
                raise MapFormatError(f"Association references unknown lane {assoc.lane_id}")
            if assoc.road_id not in graph:
                raise UnknownRoad(assoc.road_id)
        self.associations = sorted(associations, key=lambda a: (a.lane_id, a.road_id))
        self.sampled_cloud: Tuple[CloudPoint, ...] = tuple(
            CloudPoint(point.position, point.line_type, lane.lane_id)
            for lane in self.lanes.values()
            for point in lane.points
        )

    @cached_property
    def cloud_xy(self) -> np.ndarray:
        if not self.sampled_cloud:
            return np.empty((0, 2))
        return polyline_array([c.position for c in self.sampled_cloud])

    @cached_property
    def cloud_is_solid(self) -> np.ndarray:
        return np.array([c.line_type is LineType.SOLID for c in self.sampled_cloud], dtype=bool)

    @cached_property
    def cloud_lane_ids(self) -> np.ndarray:
        return np.array([c.lane_id for c in self.sampled_cloud], dtype=np.int64)

    @cached_property
    def cloud_tree(self) -> Optional[cKDTree]:
        return cKDTree(self.cloud_xy) if self.sampled_cloud else None

    @cached_property
    def association_table(self) -> Dict[int, Dict[int, float]]:
        """lane id -> road id -> association probability."""
        table: Dict[int, Dict[int, float]] = {}
        for assoc in self.associations:
            table.setdefault(assoc.lane_id, {})[assoc.road_id] = assoc.probability
        return table

    def lanes_near(self, p: PointXY, radius: float) -> List[int]:
        """Lane ids having a sample point within `radius` (plus one sample spacing) of `p`."""
        if self.cloud_tree is None:
            return []
        idx = self.cloud_tree.query_ball_point([p.x, p.y], r=radius + MAX_SAMPLE_SPACING)
        return sorted({int(self.cloud_lane_ids[i]) for i in idx})


def sample_bspline(control_points: Sequence[PointXY], interval: float,
                   line_type: LineType = LineType.SOLID) -> List[LanePoint]:
    """
    Sample a clamped cubic B-spline at uniform arc-length spacing.

    Args:
        control_points: Spline control polygon (at least 4 points)
        interval: Target spacing between samples in meters
        line_type: Marking type assigned to every sample

    Returns:
        Sampled points with tangent headings
    """
    degree = 3
    if len(control_points) < degree + 1:
        raise InvalidSpline(f"Cubic B-spline needs at least {degree + 1} control points, got {len(control_points)}")
    if not MIN_SAMPLE_SPACING <= interval <= MAX_SAMPLE_SPACING:
        raise InvalidSpline(f"Sample interval must be within [{MIN_SAMPLE_SPACING}, {MAX_SAMPLE_SPACING}], got {interval}")

    ctrl = polyline_array(control_points)
    n = len(ctrl)
    knots = np.concatenate([np.zeros(degree), np.linspace(0.0, 1.0, n - degree + 1), np.ones(degree)])
    spline = BSpline(knots, ctrl, degree)
    derivative = spline.derivative()

    # Dense evaluation to build the arc-length parameterization
    polygon_length = float(np.hypot(*np.diff(ctrl, axis=0).T).sum())
    dense_count = max(200, int(polygon_length / interval * 20))
    u = np.linspace(0.0, 1.0, dense_count)
    dense = spline(u)
    cumulative = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
    total = float(cumulative[-1])
    if total < MIN_SAMPLE_SPACING:
        raise InvalidSpline(f"Spline is too short to sample ({total:.3f} m)")

    targets = np.arange(0.0, total, interval)
    if total - targets[-1] >= MIN_SAMPLE_SPACING:
        targets = np.append(targets, total)
    params = np.interp(targets, cumulative, u)
    positions = spline(params)
    tangents = derivative(params)
    return [
        LanePoint(PointXY(float(x), float(y)), bearing(float(dx), float(dy)), line_type)
        for (x, y), (dx, dy) in zip(positions, tangents)
    ]


def lane_from_polyline(lane_id: int, points: Sequence[Tuple[PointXY, Optional[float], LineType]],
                       interval: float, level: Optional[int] = None) -> LaneMarking:
    """
    Build a lane marking from raw polyline samples. Polylines coarser than the
    allowed spacing are resampled to `interval`, each new sample taking the type
    of the nearest preceding input vertex.
    """
    if len(points) < 2:
        raise MapFormatError(f"Lane {lane_id} needs at least 2 points")
    coords = polyline_array([p for p, _, _ in points])
    spacing = np.hypot(*np.diff(coords, axis=0).T)
    if spacing.min() >= MIN_SAMPLE_SPACING and spacing.max() <= MAX_SAMPLE_SPACING:
        samples = []
        for k, (position, heading, line_type) in enumerate(points):
            if heading is None:
                j = min(k, len(points) - 2)
                heading = bearing(*(coords[j + 1] - coords[j]))
            samples.append(LanePoint(position, heading, line_type))
        return LaneMarking(lane_id, tuple(samples), LaneSource.POLYLINE, level)

    keep = np.concatenate([[True], spacing > 0])
    points = [p for p, k in zip(points, keep) if k]
    coords = coords[keep]
    spacing = spacing[spacing > 0]
    if len(points) < 2:
        raise MapFormatError(f"Lane {lane_id} has no extent")
    resampled, headings = resample_polyline(coords, interval, MIN_SAMPLE_SPACING)
    vertex_arcs = np.concatenate([[0.0], np.cumsum(spacing)])
    sample_arcs = np.arange(len(resampled)) * interval
    sample_arcs[-1] = min(sample_arcs[-1], vertex_arcs[-1])
    samples = []
    for (x, y), heading, arc in zip(resampled, headings, sample_arcs):
        vertex = int(np.searchsorted(vertex_arcs, arc + 1e-9, side="right") - 1)
        line_type = points[min(vertex, len(points) - 1)][2]
        samples.append(LanePoint(PointXY(float(x), float(y)), float(heading), line_type))
    return LaneMarking(lane_id, tuple(samples), LaneSource.POLYLINE, level)


def lane_from_bspline(lane_id: int, control_points: Sequence[PointXY], interval: float,
                      line_type: LineType = LineType.SOLID, level: Optional[int] = None) -> LaneMarking:
    return LaneMarking(lane_id, tuple(sample_bspline(control_points, interval, line_type)), LaneSource.BSPLINE, level)


def lane_point_matches(graph: RoadGraph, lane: LaneMarking,
                       emission: EmissionParams = LANE_EMISSION,
                       transition_params: Optional[TransitionParams] = None
                       ) -> List[Tuple[Optional[int], Dict[int, float]]]:
    """
    Run the HMM over the lane's sample points.

    Candidates are restricted to roads on the lane's level when it has one.

    Returns:
        Per point, the road of the backtracked path (None at restart
        boundaries) and the normalized step distribution over candidates
    """
    matcher = HmmMatcher(graph, emission, transition_params or TransitionParams())
    distributions = []
    for pose in lane.poses():
        candidates = graph.candidates(pose.position, emission.candidate_radius)
        if lane.level is not None:
            candidates = [(rid, proj) for rid, proj in candidates if graph.road(rid).level == lane.level]
        distributions.append(step_probabilities(matcher.step(pose, candidates=candidates)))
    if all(not dist for dist in distributions):
        return [(None, {}) for _ in distributions]
    return list(zip(backtrack(matcher.state), distributions))


def associate_lane(graph: RoadGraph, lane: LaneMarking,
                   emission: EmissionParams = LANE_EMISSION,
                   transition_params: Optional[TransitionParams] = None,
                   association_floor: float = DEFAULT_ASSOCIATION_FLOOR) -> List[LaneAssociation]:
    """
    Associate one lane marking with the roads of the graph.

    Each sample point is assigned the road of the backtracked lattice path.
    The association probability of a road is the maximum, over the points
    assigned to it, of the point's step probability for that road.

    Returns:
        One association per road whose probability exceeds `association_floor`,
        ordered by road id
    """
    matches = lane_point_matches(graph, lane, emission, transition_params)
    per_road: Dict[int, List[Tuple[int, float]]] = {}
    for k, (rid, dist) in enumerate(matches):
        if rid is not None:
            per_road.setdefault(rid, []).append((k, dist[rid]))

    associations = []
    for rid in sorted(per_road):
        per_point = tuple(per_road[rid])
        probability = max(prob for _, prob in per_point)
        if probability > association_floor:
            associations.append(LaneAssociation(lane.lane_id, rid, probability, per_point))
    return associations


@timed_operation("build_enriched_map")
def build_enriched_map(graph: RoadGraph, lanes: Iterable[LaneMarking],
                       emission: EmissionParams = LANE_EMISSION,
                       transition_params: Optional[TransitionParams] = None,
                       association_floor: float = DEFAULT_ASSOCIATION_FLOOR) -> EnrichedMap:
    """
    Associate every lane with the road network to form the enriched map.
    One road may hold several lanes and one lane may belong to several roads.
    """
    logger = logging.getLogger(__name__)
    by_id: Dict[int, LaneMarking] = {}
    for lane in lanes:
        if lane.lane_id in by_id:
            raise DuplicateLane(f"Duplicate lane id {lane.lane_id}")
        by_id[lane.lane_id] = lane

    associations: List[LaneAssociation] = []
    for lane_id in sorted(by_id):
        lane_assocs = associate_lane(graph, by_id[lane_id], emission, transition_params, association_floor)
        if not lane_assocs:
            logger.warning(f"Lane {lane_id} has no road within {emission.candidate_radius} m")
        associations.extend(lane_assocs)
    logger.info(f"Enriched map: {len(by_id)} lanes, {len(associations)} associations")
    return EnrichedMap(graph, by_id, associations)

