"""
Seeded synthetic multilevel road networks and drives.

The network is a grid of ordinary surface roads: an eastbound avenue along
y = 0, a two-way back street and two-way cross streets. An elevated expressway
runs eastbound just above part of the avenue. Its SD polylines begin with the
on-ramp leaving the avenue and end with the off-ramp rejoining it, and they are
split at the intermediate exit nodes, where exit ramps descend to the avenue.
Ramps leave their parent road collinearly, then bear off at a small angle and
run alongside it.

Lane markings describe the physical carriageways: the elevated deck sits
laterally close to the avenue centerline, and every ramp is a one-lane
carriageway beside the deck's right edge, whose lane coincides with the
parent's right lane where it diverges and merges. Simulated vehicles drive the
rightmost lane.

Network geometry depends on the configuration only; the seed drives the noise
of the simulated drives.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from src.core.geometry import PointXY, Pose, offset_polyline, point_at_arc, polyline_length, resample_polyline
from src.core.icp_localizer import TypedPoint, to_vehicle_frame
from src.core.lane_enrichment import MIN_SAMPLE_SPACING, LaneMarking, LanePoint, LaneSource, LineType
from src.core.metrics import GroundTruth
from src.core.pipeline import Observation
from src.core.road_graph import DEFAULT_SNAP_TOLERANCE, Road, RoadClass, RoadGraph
from src.core.scenario import ScenarioProbs
from src.services.map_io import write_map
from src.services.stream_io import write_detections, write_lanes, write_scenario, write_trajectory, write_truth
from src.utils.errors import ConfigError, InvalidRoute

DEFAULT_ORIGIN = (31.2304, 121.4737)
AVENUE_BASE = 1000
BACK_STREET_BASE = 2000
CROSS_STREET_BASE = 3000
ELEVATED_BASE = 4000
EXIT_RAMP_BASE = 6000
MAX_BLOCKS = 999
# Lane marking ids are road_id * LANE_ID_STRIDE + index
LANE_ID_STRIDE = 100
RAMP_LANES = 1
# A ramp runs collinear with its parent for RAMP_STUB meters, then tapers over RAMP_TAPER meters
RAMP_STUB = 20.0
RAMP_TAPER = 40.0
ROUTE_KINDS = ("surface", "elevated", "ramp_exit")
BUNDLE_FILES = {
    "map": "map.geojson",
    "lanes": "lanes.jsonl",
    "traj": "traj.jsonl",
    "detections": "detections.jsonl",
    "scenario": "scenario.jsonl",
    "truth": "truth.jsonl",
    "config": "sim.yaml",
}

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    n_blocks: int = 10
    block_length: float = 200.0
    elevated_span: int = 6
    ramp_spacing: int = 2
    lane_count: int = 2
    elevated_lane_count: int = 3
    lane_width: float = 3.5
    # Lateral offset of the elevated SD line from the avenue's
    elevated_offset: float = 1.0
    # How far the SD line of a ramp's middle section lies right of the avenue's
    ramp_offset: float = 0.5
    lane_interval: float = 2.0


@dataclass(frozen=True)
class NoiseConfig:
    gnss_sigma: float = 10.0
    bias_walk: float = 0.5
    bias_decay: float = 0.98
    heading_sigma: float = 2.0


@dataclass(frozen=True)
class DetectionConfig:
    dropout: float = 0.1
    point_noise: float = 0.2
    forward_range: float = 30.0
    lateral_range: float = 8.0


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    network: NetworkConfig = NetworkConfig()
    noise: NoiseConfig = NoiseConfig()
    detection: DetectionConfig = DetectionConfig()
    scenario_accuracy: float = 0.9
    scenario_peak: float = 0.9
    speed: float = 12.0
    start_offset: float = 5.0
    route: Union[str, Tuple[int, ...]] = "elevated"

    def __post_init__(self):
        net, noise, det = self.network, self.noise, self.detection
        if not 1 <= net.n_blocks <= MAX_BLOCKS:
            raise ConfigError(f"n_blocks must be within [1, {MAX_BLOCKS}], got {net.n_blocks}")
        if net.elevated_span < 0 or net.ramp_spacing < 1:
            raise ConfigError("elevated_span must be >= 0 and ramp_spacing >= 1")
        if not 1 <= net.lane_count <= 8 or not 1 <= net.elevated_lane_count <= 8:
            raise ConfigError("lane_count and elevated_lane_count must be within [1, 8]")
        for name, value in (("block_length", net.block_length), ("lane_width", net.lane_width),
                            ("speed", self.speed)):
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        min_block = 2 * (RAMP_STUB + RAMP_TAPER) + 1.0
        if net.block_length <= min_block:
            raise ConfigError(f"block_length must exceed {min_block} m")
        if net.elevated_offset <= DEFAULT_SNAP_TOLERANCE:
            raise ConfigError(f"elevated_offset must exceed the {DEFAULT_SNAP_TOLERANCE} m snap tolerance, "
                              f"got {net.elevated_offset}")
        if not MIN_SAMPLE_SPACING <= net.lane_interval <= 5.0:
            raise ConfigError(f"lane_interval must be within [{MIN_SAMPLE_SPACING}, 5], got {net.lane_interval}")
        for name, value in (("scenario_accuracy", self.scenario_accuracy), ("scenario_peak", self.scenario_peak),
                            ("dropout", det.dropout), ("bias_decay", noise.bias_decay)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be within [0, 1], got {value}")
        for name, value in (("gnss_sigma", noise.gnss_sigma), ("bias_walk", noise.bias_walk),
                            ("heading_sigma", noise.heading_sigma), ("point_noise", det.point_noise),
                            ("start_offset", self.start_offset), ("ramp_offset", net.ramp_offset)):
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if isinstance(self.route, str) and self.route not in ROUTE_KINDS:
            raise ConfigError(f"route must be one of {ROUTE_KINDS} or a list of road ids, got {self.route!r}")
    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimConfig":
        """Build from a nested mapping; unknown keys are rejected."""
        sections = {"network": NetworkConfig, "noise": NoiseConfig, "detection": DetectionConfig}
        top_level = {f.name for f in fields(cls)}
        kwargs: Dict[str, Any] = {}
        for key, value in (data or {}).items():
            if key not in top_level:
                raise ConfigError(f"Unknown simulator setting: {key}")
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"Simulator section '{key}' must be a mapping")
                allowed = {f.name for f in fields(sections[key])}
                unknown = set(value) - allowed
                if unknown:
                    raise ConfigError(f"Unknown {key} settings: {sorted(unknown)}")
                kwargs[key] = sections[key](**value)
            elif key == "route" and isinstance(value, list):
                kwargs[key] = tuple(int(v) for v in value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"Invalid simulator configuration: {e}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if isinstance(self.route, tuple):
            data["route"] = list(self.route)
        return data


@dataclass
class SimNetwork:
    graph: RoadGraph
    lanes: List[LaneMarking]
    # Driven lane centerline of roads whose lane does not simply follow the SD line
    drive_paths: Dict[int, np.ndarray]
    right_lane_offset: float
    routes: Dict[str, List[int]]
    elevated_blocks: Tuple[int, int]
    exit_nodes: List[int] = field(default_factory=list)

    def drive_path(self, road_id: int) -> np.ndarray:
        """Centerline of the lane a simulated vehicle follows along `road_id`."""
        if road_id in self.drive_paths:
            return self.drive_paths[road_id]
        return offset_polyline(self.graph.road(road_id).coords, self.right_lane_offset)


@dataclass
class SimDrive:
    observations: List[Observation]
    truth: GroundTruth
    route: List[int]


def _road(road_id: int, points: Sequence[Tuple[float, float]], road_class: RoadClass = RoadClass.ORDINARY,
          level: int = 0) -> Road:
    return Road(road_id, tuple(PointXY(float(x), float(y)) for x, y in points), road_class, level)


def elevated_layout(net: NetworkConfig) -> Tuple[int, int]:
    """First and end (exclusive) block index of the elevated deck; equal when there is none."""
    span = min(net.elevated_span, net.n_blocks - 4) if net.n_blocks >= 5 else 0
    if span <= 0:
        return 0, 0
    first = 2 + (net.n_blocks - 4 - span) // 2
    return first, first + span


def ramp_profile(x0: float, x1: float, y_start: float, y_run: float, y_end: float) -> List[Tuple[float, float]]:
    """Eastbound ramp polyline: a stub at y_start, a taper to y_run, the run, a taper to y_end and a final stub."""
    return [
        (x0, y_start),
        (x0 + RAMP_STUB, y_start),
        (x0 + RAMP_STUB + RAMP_TAPER, y_run),
        (x1 - RAMP_STUB - RAMP_TAPER, y_run),
        (x1 - RAMP_STUB, y_end),
        (x1, y_end),
    ]


def marking_offsets(lane_count: int, lane_width: float) -> List[float]:
    """
    Lateral offsets (left positive) of the lane markings of a carriageway: the
    two edges and the separators. Two 3.5 m lanes have markings at -3.5, 0 and
    +3.5; their centerlines, given by `lane_center_offsets`, lie at -1.75 and +1.75.
    """
    return [(i - lane_count / 2.0) * lane_width for i in range(lane_count + 1)]


def lane_center_offsets(lane_count: int, lane_width: float) -> List[float]:
    """Lateral offsets of the driving-lane centerlines, rightmost first."""
    return [(j + 0.5 - lane_count / 2.0) * lane_width for j in range(lane_count)]


def _join(points: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    # Consecutive duplicates appear where polyline pieces meet
    joined = [points[0]]
    for p in points[1:]:
        if abs(p[0] - joined[-1][0]) > 1e-9 or abs(p[1] - joined[-1][1]) > 1e-9:
            joined.append(p)
    return joined


def _sample_marking(lane_id: int, coords: np.ndarray, interval: float,
                    types: Callable[[float], LineType], level: int) -> LaneMarking:
    points, headings = resample_polyline(coords, interval, MIN_SAMPLE_SPACING)
    n = len(points)
    samples = tuple(
        LanePoint(PointXY(float(x), float(y)), float(h), types(k / max(n - 1, 1)))
        for k, ((x, y), h) in enumerate(zip(points, headings))
    )
    return LaneMarking(lane_id, samples, LaneSource.POLYLINE, level)


def _carriageway_markings(first_id: int, center: Sequence[Tuple[float, float]], lane_count: int,
                          lane_width: float, interval: float, level: int,
                          dashed_entry_left: bool = False) -> List[LaneMarking]:
    """Solid edges and dashed separators around a carriageway centerline."""
    coords = np.array(center, dtype=float)
    offsets = marking_offsets(lane_count, lane_width)
    markings = []
    for i, offset in enumerate(offsets):
        edge = i in (0, len(offsets) - 1)
        if dashed_entry_left and i == len(offsets) - 1:
            # Diverging side: dashed over the first third, solid afterwards
            types = lambda frac: LineType.DASHED if frac < 1.0 / 3.0 else LineType.SOLID
        elif edge:
            types = lambda frac: LineType.SOLID
        else:
            types = lambda frac: LineType.DASHED
        markings.append(_sample_marking(first_id + i, offset_polyline(coords, offset), interval, types, level))
    return markings


def generate_network(config: SimConfig) -> SimNetwork:
    """
    Build the synthetic multilevel network with its lane markings.

    Args:
        config: Simulator configuration (only the network section is used)

    Returns:
        SimNetwork with the road graph, lane markings, driven lane paths and
        the predefined routes
    """
    net = config.network
    n, length, width, interval = net.n_blocks, net.block_length, net.lane_width, net.lane_interval
    first, end = elevated_layout(net)
    right_lane = lane_center_offsets(net.lane_count, width)[0]

    surface: List[Road] = []
    two_way: List[Road] = []
    for k in range(n):
        surface.append(_road(AVENUE_BASE + k, [(k * length, 0.0), ((k + 1) * length, 0.0)]))
        two_way.append(_road(BACK_STREET_BASE + k, [(k * length, length), ((k + 1) * length, length)]))
    for k in range(n + 1):
        two_way.append(_road(CROSS_STREET_BASE + k, [(k * length, 0.0), (k * length, length)]))

    lanes: List[LaneMarking] = []
    for road in surface + two_way:
        lanes.extend(_carriageway_markings(road.road_id * LANE_ID_STRIDE, road.coords,
                                           net.lane_count, width, interval, level=0))

    express: List[Road] = []
    drive_paths: Dict[int, np.ndarray] = {}
    exits: List[int] = []
    elevated_ids: List[int] = []
    if end > first:
        y_e = net.elevated_offset
        deck_right = y_e + lane_center_offsets(net.elevated_lane_count, width)[0]
        # Ramp carriageways run beside the deck's right edge
        ramp_run = y_e - (net.elevated_lane_count + RAMP_LANES) * width / 2.0
        sd_run = -net.ramp_offset
        exits = list(range(first + net.ramp_spacing, end, net.ramp_spacing))
        nodes = [first - 1] + exits + [end + 1]

        for a, b in zip(nodes, nodes[1:]):
            rid = ELEVATED_BASE + a
            sd: List[Tuple[float, float]] = []
            path: List[Tuple[float, float]] = []
            markings: List[LaneMarking] = []
            if a == first - 1:
                sd += ramp_profile(a * length, first * length, 0.0, sd_run, y_e)
                center = ramp_profile(a * length, first * length, right_lane, ramp_run, deck_right)
                markings += _carriageway_markings(rid * LANE_ID_STRIDE, center, RAMP_LANES, width, interval,
                                                  level=1, dashed_entry_left=True)
                path += center
            x_from, x_to = max(a, first) * length, min(b, end) * length
            sd += [(x_from, y_e), (x_to, y_e)]
            markings += _carriageway_markings(rid * LANE_ID_STRIDE + len(markings), [(x_from, y_e), (x_to, y_e)],
                                              net.elevated_lane_count, width, interval, level=1)
            path += [(x_from, deck_right), (x_to, deck_right)]
            if b == end + 1:
                sd += ramp_profile(end * length, b * length, y_e, sd_run, 0.0)
                center = ramp_profile(end * length, b * length, deck_right, ramp_run, right_lane)
                markings += _carriageway_markings(rid * LANE_ID_STRIDE + len(markings), center, RAMP_LANES, width,
                                                  interval, level=1, dashed_entry_left=True)
                path += center
            express.append(_road(rid, _join(sd), RoadClass.EXPRESSWAY, 1))
            drive_paths[rid] = np.array(_join(path))
            lanes.extend(markings)
            elevated_ids.append(rid)

        for k in exits:
            rid = EXIT_RAMP_BASE + k
            express.append(_road(rid, ramp_profile(k * length, (k + 1) * length, y_e, sd_run, 0.0),
                                 RoadClass.EXPRESSWAY, 1))
            center = ramp_profile(k * length, (k + 1) * length, deck_right, ramp_run, right_lane)
            lanes.extend(_carriageway_markings(rid * LANE_ID_STRIDE, center, RAMP_LANES, width, interval,
                                               level=1, dashed_entry_left=True))
            drive_paths[rid] = np.array(center)

    graph = RoadGraph(surface + two_way + express + [r.reversed_twin() for r in two_way], origin=DEFAULT_ORIGIN)
    lanes.sort(key=lambda lane: lane.lane_id)

    avenue = [AVENUE_BASE + k for k in range(n)]
    routes = {"surface": avenue, "elevated": avenue, "ramp_exit": avenue}
    if elevated_ids:
        lead_in = avenue[:first - 1]
        routes["elevated"] = lead_in + elevated_ids + avenue[end + 1:]
        routes["ramp_exit"] = routes["elevated"]
        if exits:
            k = exits[-1]
            upstream = [rid for rid in elevated_ids if rid - ELEVATED_BASE < k]
            routes["ramp_exit"] = lead_in + upstream + [EXIT_RAMP_BASE + k] + avenue[k + 1:]

    logger.info(f"Generated network: {len(graph)} roads, {len(lanes)} lane markings, "
                f"elevated blocks [{first}, {end}), exits at {exits}")
    return SimNetwork(graph, lanes, drive_paths, right_lane, routes, (first, end), exits)


def resolve_route(network: SimNetwork, route: Union[str, Sequence[int]]) -> List[int]:
    """Route road ids for a route kind or an explicit id list; raises InvalidRoute if disconnected."""
    if isinstance(route, str):
        if route not in network.routes:
            raise InvalidRoute(f"Unknown route kind: {route}")
        road_ids = list(network.routes[route])
    else:
        road_ids = [int(r) for r in route]
    if not road_ids:
        raise InvalidRoute("Route is empty")
    for rid in road_ids:
        if rid not in network.graph:
            raise InvalidRoute(f"Route references unknown road {rid}")
    for a, b in zip(road_ids, road_ids[1:]):
        if b not in network.graph.successors(a):
            raise InvalidRoute(f"Road {b} does not follow road {a}")
    return road_ids


def _scenario_for(rng: np.random.Generator, t: float, road_class: RoadClass, accuracy: float,
                  peak: float) -> ScenarioProbs:
    classes = [RoadClass.ORDINARY, RoadClass.EXPRESSWAY, RoadClass.TUNNEL]
    target = road_class
    if rng.random() >= accuracy:
        wrong = [c for c in classes if c is not road_class]
        target = wrong[int(rng.integers(len(wrong)))]
    rest = (1.0 - peak) / 2.0
    p = [peak if c is target else rest for c in classes]
    return ScenarioProbs.normalized(t, *p)


def _level_clouds(network: SimNetwork) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    by_level: Dict[int, List[Tuple[float, float, bool]]] = {}
    for lane in network.lanes:
        level = 0 if lane.level is None else lane.level
        by_level.setdefault(level, []).extend(
            (p.position.x, p.position.y, p.line_type is LineType.SOLID) for p in lane.points
        )
    return {
        level: (np.array([[x, y] for x, y, _ in pts]), np.array([s for _, _, s in pts], dtype=bool))
        for level, pts in by_level.items()
    }


def simulate_drive(network: SimNetwork, route: Union[str, Sequence[int]], config: SimConfig) -> SimDrive:
    """
    Drive a route at constant speed and observe it at 1 Hz.

    Args:
        network: Generated network
        route: Route kind or explicit road id list
        config: Simulator configuration (seed, noise, detection and scenario settings)

    Returns:
        SimDrive with noisy observations and the ground truth
    """
    road_ids = resolve_route(network, route)
    graph = network.graph
    rng = np.random.default_rng(config.seed)
    noise, det = config.noise, config.detection

    paths = {rid: network.drive_path(rid) for rid in set(road_ids)}
    lengths = [polyline_length(paths[rid]) for rid in road_ids]
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    total = float(cumulative[-1])
    clouds = _level_clouds(network)

    observations: List[Observation] = []
    truth_t: List[float] = []
    truth_roads: List[int] = []
    truth_xy: List[PointXY] = []
    bias = np.zeros(2)
    k = 0
    while True:
        s = config.start_offset + config.speed * k
        if s >= total:
            break
        t = float(k)
        j = int(np.searchsorted(cumulative, s, side="right") - 1)
        rid = road_ids[j]
        position, heading = point_at_arc(paths[rid], s - cumulative[j])
        road = graph.road(rid)

        bias = noise.bias_decay * bias + rng.normal(0.0, noise.bias_walk, 2)
        error = bias + rng.normal(0.0, noise.gnss_sigma, 2)
        observed = Pose(PointXY(position.x + float(error[0]), position.y + float(error[1])),
                        heading + float(rng.normal(0.0, noise.heading_sigma)))
        true_pose = Pose(position, heading)

        detections: Optional[Tuple[TypedPoint, ...]] = None
        if rng.random() >= det.dropout and road.level in clouds:
            xy, solid = clouds[road.level]
            local = to_vehicle_frame(xy, true_pose)
            mask = (local[:, 0] >= 0.0) & (local[:, 0] <= det.forward_range) & (np.abs(local[:, 1]) <= det.lateral_range)
            local = local[mask] + rng.normal(0.0, det.point_noise, (int(mask.sum()), 2))
            detections = tuple(
                TypedPoint(PointXY(float(x), float(y)), LineType.SOLID if is_solid else LineType.DASHED)
                for (x, y), is_solid in zip(local, solid[mask])
            )

        scenario = _scenario_for(rng, t, road.road_class, config.scenario_accuracy, config.scenario_peak)
        observations.append(Observation(t, observed, detections, scenario))
        truth_t.append(t)
        truth_roads.append(rid)
        truth_xy.append(position)
        k += 1

    if not observations:
        raise InvalidRoute(f"Route of {total:.1f} m is shorter than the start offset {config.start_offset} m")
    logger.info(f"Simulated drive (seed {config.seed}): {len(observations)} observations over {total:.0f} m")
    truth = GroundTruth(tuple(truth_t), tuple(truth_roads), tuple(truth_xy))
    return SimDrive(observations, truth, road_ids)


def write_bundle(out_dir: str, network: SimNetwork, drive: SimDrive, config: SimConfig) -> Dict[str, str]:
    """
    Write a dataset bundle in the formats the matcher ingests.

    Returns:
        Mapping of artifact name to written path
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: str(out / filename) for name, filename in BUNDLE_FILES.items()}

    write_map(paths["map"], network.graph)
    write_lanes(paths["lanes"], network.lanes)
    write_trajectory(paths["traj"], [(obs.t, obs.pose) for obs in drive.observations])
    write_detections(paths["detections"], [(obs.t, obs.detections) for obs in drive.observations])
    write_scenario(paths["scenario"], [obs.scenario for obs in drive.observations if obs.scenario is not None])
    write_truth(paths["truth"], drive.truth)
    with open(paths["config"], "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True, default_flow_style=False)
    logger.info(f"Wrote bundle for seed {config.seed} to {out}")
    return paths
