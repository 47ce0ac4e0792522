import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Dict, Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np
from shapely.geometry import LineString, box
from shapely.strtree import STRtree

from src.core.geometry import PointXY, Projection, polyline_array, polyline_length, project_onto_polyline
from src.utils.errors import ConfigError, MapFormatError, UnknownRoad

DEFAULT_CANDIDATE_RADIUS = 50.0
DEFAULT_PATH_CAP = 300.0
DEFAULT_SNAP_TOLERANCE = 0.5
# Reversed twins of two-way roads live in their own id range
REVERSE_ID_OFFSET = 1_000_000_000


class RoadClass(Enum):
    ORDINARY = "ordinary"
    EXPRESSWAY = "expressway"
    TUNNEL = "tunnel"


@dataclass(frozen=True)
class Road:
    road_id: int
    polyline: Tuple[PointXY, ...]
    road_class: RoadClass = RoadClass.ORDINARY
    level: int = 0
    successors: Optional[Tuple[int, ...]] = None
    twin_of: Optional[int] = None

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise MapFormatError(f"Road {self.road_id} needs at least 2 points")
        for a, b in zip(self.polyline, self.polyline[1:]):
            if a == b:
                raise MapFormatError(f"Road {self.road_id} has repeated consecutive point ({a.x}, {a.y})")

    @cached_property
    def coords(self) -> np.ndarray:
        return polyline_array(self.polyline)

    @cached_property
    def length(self) -> float:
        return polyline_length(self.coords)

    @property
    def start(self) -> PointXY:
        return self.polyline[0]

    @property
    def end(self) -> PointXY:
        return self.polyline[-1]

    def reversed_twin(self) -> "Road":
        return Road(
            road_id=self.road_id + REVERSE_ID_OFFSET,
            polyline=tuple(reversed(self.polyline)),
            road_class=self.road_class,
            level=self.level,
            successors=None,
            twin_of=self.road_id,
        )


def project_point(road: Road, p: PointXY) -> Projection:
    """Project a point onto a road polyline."""
    return project_onto_polyline(road.coords, p)


class RoadGraph:
    """
    Directed road network with a static segment index.

    The graph is immutable after construction and may be shared between
    concurrent matcher sessions.
    """

    def __init__(self, roads: Iterable[Road], origin: Tuple[float, float] = (0.0, 0.0),
                 snap_tolerance: float = DEFAULT_SNAP_TOLERANCE):
        """
        Build the graph.

        Args:
            roads: Roads of the network. Roads whose `successors` is None get
                their connectivity derived from shared endpoints.
            origin: WGS84 (lat, lon) anchor of the local frame
            snap_tolerance: Endpoint snap distance used to derive connectivity
        """
        self.logger = logging.getLogger(__name__)
        self.origin = origin
        self.snap_tolerance = snap_tolerance
        self.roads: Dict[int, Road] = {}
        for road in roads:
            if road.road_id in self.roads:
                raise MapFormatError(f"Duplicate road id {road.road_id}")
            self.roads[road.road_id] = road

        self._successors = self._resolve_successors()
        preds: Dict[int, List[int]] = {rid: [] for rid in self.roads}
        for rid, succs in self._successors.items():
            for s in succs:
                preds[s].append(rid)
        self._predecessors = {rid: tuple(sorted(p)) for rid, p in preds.items()}

        self._digraph = nx.DiGraph()
        self._digraph.add_nodes_from(self.roads)
        for rid, succs in self._successors.items():
            for s in succs:
                # Entering a road costs its length; the target's own length is removed later
                self._digraph.add_edge(rid, s, weight=self.roads[s].length)

        self._segment_owner: List[int] = []
        segments = []
        for rid in sorted(self.roads):
            coords = self.roads[rid].coords
            for i in range(len(coords) - 1):
                segments.append(LineString(coords[i:i + 2]))
                self._segment_owner.append(rid)
        self._index = STRtree(segments) if segments else None
        self.logger.debug(f"Road graph built: {len(self.roads)} roads, {len(segments)} segments")

    def _resolve_successors(self) -> Dict[int, Tuple[int, ...]]:
        resolved: Dict[int, Tuple[int, ...]] = {}
        starts = sorted(self.roads.values(), key=lambda r: r.road_id)
        for road in starts:
            if road.successors is not None:
                for s in road.successors:
                    if s not in self.roads:
                        raise UnknownRoad(s)
                resolved[road.road_id] = tuple(sorted(set(road.successors)))
                continue
            derived = []
            for other in starts:
                if other.road_id == road.road_id:
                    continue
                # A two-way road never continues into its own reverse
                if other.twin_of == road.road_id or road.twin_of == other.road_id:
                    continue
                if road.end.distance_to(other.start) <= self.snap_tolerance:
                    derived.append(other.road_id)
            resolved[road.road_id] = tuple(derived)
        return resolved

    def __contains__(self, road_id: int) -> bool:
        return road_id in self.roads

    def __len__(self) -> int:
        return len(self.roads)

    def road(self, road_id: int) -> Road:
        try:
            return self.roads[road_id]
        except KeyError:
            raise UnknownRoad(road_id)

    def successors(self, road_id: int) -> Tuple[int, ...]:
        self.road(road_id)
        return self._successors[road_id]

    def predecessors(self, road_id: int) -> Tuple[int, ...]:
        self.road(road_id)
        return self._predecessors[road_id]

    def road_ids(self) -> List[int]:
        return sorted(self.roads)

    def candidates(self, p: PointXY, radius: float = DEFAULT_CANDIDATE_RADIUS) -> List[Tuple[int, Projection]]:
        """
        Roads within `radius` of `p`, ordered by road id.

        Args:
            p: Query point
            radius: Search radius in meters (inclusive)

        Returns:
            List of (road id, projection) pairs
        """
        if radius <= 0:
            raise ConfigError(f"Candidate radius must be positive, got {radius}")
        if self._index is None:
            return []
        hits = self._index.query(box(p.x - radius, p.y - radius, p.x + radius, p.y + radius))
        road_ids = sorted({self._segment_owner[int(i)] for i in np.atleast_1d(hits)})
        result = []
        for rid in road_ids:
            projection = project_point(self.roads[rid], p)
            if projection.distance <= radius:
                result.append((rid, projection))
        return result

    def candidates_scan(self, p: PointXY, radius: float = DEFAULT_CANDIDATE_RADIUS) -> List[Tuple[int, Projection]]:
        """Exhaustive-scan equivalent of `candidates`."""
        result = []
        for rid in sorted(self.roads):
            projection = project_point(self.roads[rid], p)
            if projection.distance <= radius:
                result.append((rid, projection))
        return result

    def min_connected_distance(self, from_id: int, to_id: int, cap: float = DEFAULT_PATH_CAP) -> Optional[float]:
        """
        Length of the shortest directed path from `from_id` to `to_id`, counting
        only intermediate roads.

        Returns:
            0 for the road itself or a direct successor, the intermediate length
            if it does not exceed `cap`, otherwise None
        """
        self.road(from_id)
        self.road(to_id)
        if cap <= 0:
            raise ConfigError(f"Path cap must be positive, got {cap}")
        if from_id == to_id or to_id in self._successors[from_id]:
            return 0.0
        return self._bounded_path_length(from_id, to_id, cap)

    @lru_cache(maxsize=65536)
    def _bounded_path_length(self, from_id: int, to_id: int, cap: float) -> Optional[float]:
        cutoff = cap + self.roads[to_id].length
        try:
            _, path = nx.single_source_dijkstra(self._digraph, from_id, target=to_id, cutoff=cutoff, weight="weight")
        except nx.NetworkXNoPath:
            return None
        intermediate = math.fsum(self.roads[rid].length for rid in path[1:-1])
        return intermediate if intermediate <= cap else None

    def is_connected_sequence(self, road_ids: List[int]) -> bool:
        """True if every consecutive pair is the same road or a direct successor."""
        for a, b in zip(road_ids, road_ids[1:]):
            if a != b and b not in self._successors[a]:
                return False
        return True

    def with_road(self, road: Road) -> "RoadGraph":
        """A new graph with one more road (the receiver is left untouched)."""
        return RoadGraph(list(self.roads.values()) + [road], origin=self.origin, snap_tolerance=self.snap_tolerance)
