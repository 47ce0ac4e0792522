"""
Re-localization against the enriched map and the lane-marking emission factor.

Detected lane-marking points (vehicle frame: x forward, y left) are placed in
the map frame with the observed pose, then registered against the map's lane
sample cloud with a type-aware ICP, seeded by a coarse grid search so that
GNSS errors larger than the lane spacing do not lock onto a neighbouring lane.
The resulting pose correction is a rigid transform about the observed vehicle
position.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.geometry import PointXY, Pose, heading_diff, lateral_offset
from src.core.hmm_matcher import emission_distance, emission_heading
from src.core.lane_enrichment import EnrichedMap, LineType
from src.utils.errors import ConfigError, RegistrationDegenerate

# Nearest map samples examined per detection when searching the cheapest correspondence
NEIGHBOURS_PER_POINT = 16
MIN_CORRESPONDENCES = 3
# Coarse search: detections scored per placement, neighbours per detection,
# margin in meters a non-zero placement must win by, and the refining pass radius
SEARCH_POINTS = 32
NEIGHBOURS_PER_SEARCH_POINT = 4
SEARCH_TIE = 0.02
REFINE_RADIUS = 2.0

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TypedPoint:
    position: PointXY
    line_type: LineType


@dataclass(frozen=True)
class IcpParams:
    f_type: float = 2.0
    max_iterations: int = 30
    convergence_tol: float = 0.01
    max_correspondence: float = 3.0
    max_rotation: float = 10.0
    translation_only: bool = False
    min_points: int = 6
    search_radius: float = 25.0
    search_step: float = 0.5
    rotation_step: float = 1.0

    def __post_init__(self):
        if self.f_type < 0:
            raise ConfigError(f"f_type must be non-negative, got {self.f_type}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise ConfigError(f"convergence_tol must be positive, got {self.convergence_tol}")
        if not self.max_correspondence > 0:
            raise ConfigError(f"max_correspondence must be positive, got {self.max_correspondence}")
        if not 0 <= self.max_rotation <= 180:
            raise ConfigError(f"max_rotation must be within [0, 180], got {self.max_rotation}")
        if self.search_radius < 0:
            raise ConfigError(f"search_radius must be non-negative, got {self.search_radius}")
        if not self.search_step > 0 or not self.rotation_step > 0:
            raise ConfigError(f"search_step and rotation_step must be positive, got {self.search_step}, {self.rotation_step}")


@dataclass(frozen=True)
class RigidTransform2D:
    """Counter-clockwise rotation (degrees) about `pivot`, followed by a translation."""
    rotation: float
    translation: Tuple[float, float]
    pivot: PointXY = PointXY(0.0, 0.0)

    def __post_init__(self):
        wrapped = math.fmod(self.rotation, 360.0)
        if wrapped > 180.0:
            wrapped -= 360.0
        elif wrapped <= -180.0:
            wrapped += 360.0
        object.__setattr__(self, "rotation", wrapped)

    def apply_array(self, xy: np.ndarray) -> np.ndarray:
        pivot = np.array([self.pivot.x, self.pivot.y])
        return _rotate(xy - pivot, math.radians(self.rotation)) + pivot + np.asarray(self.translation)

    def apply_point(self, p: PointXY) -> PointXY:
        x, y = self.apply_array(np.array([[p.x, p.y]]))[0]
        return PointXY(float(x), float(y))

    def apply_pose(self, pose: Pose) -> Pose:
        # Counter-clockwise rotation lowers a compass heading
        return Pose(self.apply_point(pose.position), pose.heading - self.rotation)

    @classmethod
    def identity(cls, pivot: PointXY = PointXY(0.0, 0.0)) -> "RigidTransform2D":
        return cls(0.0, (0.0, 0.0), pivot)


@dataclass(frozen=True)
class LaneContext:
    """A lane marking near the vehicle: lateral distance and included heading angle."""
    lane_id: int
    distance: float
    delta_theta: float


def type_loss(t_v: LineType, t_m: LineType, f_type: float) -> float:
    """Registration penalty for a lane-type mismatch."""
    return 0.0 if t_v == t_m else f_type


def correspondence_cost(p_v: TypedPoint, p_m: TypedPoint, f_type: float) -> float:
    """Registration loss between a detection point and a map point."""
    loss = type_loss(p_v.line_type, p_m.line_type, f_type)
    dx = p_v.position.x - p_m.position.x
    dy = p_v.position.y - p_m.position.y
    return math.sqrt(dx * dx + dy * dy + loss * loss)


def _rotate(xy: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.column_stack([c * xy[:, 0] - s * xy[:, 1], s * xy[:, 0] + c * xy[:, 1]])


def _frame_axes(pose: Pose) -> Tuple[np.ndarray, np.ndarray]:
    theta = math.radians(pose.heading)
    forward = np.array([math.sin(theta), math.cos(theta)])
    left = np.array([-math.cos(theta), math.sin(theta)])
    return forward, left


def to_map_frame(xy: np.ndarray, pose: Pose) -> np.ndarray:
    """Vehicle-frame points (x forward, y left) to map coordinates."""
    forward, left = _frame_axes(pose)
    origin = np.array([pose.position.x, pose.position.y])
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return origin + xy[:, :1] * forward + xy[:, 1:] * left


def to_vehicle_frame(xy: np.ndarray, pose: Pose) -> np.ndarray:
    """Map coordinates to the vehicle frame of `pose`."""
    forward, left = _frame_axes(pose)
    delta = np.asarray(xy, dtype=float).reshape(-1, 2) - np.array([pose.position.x, pose.position.y])
    return np.column_stack([delta @ forward, delta @ left])


def _best_fit(src: np.ndarray, dst: np.ndarray, translation_only: bool) -> Tuple[float, np.ndarray]:
    """Closed-form rigid alignment (about the coordinate origin) minimizing squared distance."""
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    if translation_only:
        return 0.0, mu_dst - mu_src
    a = src - mu_src
    b = dst - mu_dst
    angle = math.atan2(float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])),
                       float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])))
    return angle, mu_dst - _rotate(mu_src[None, :], angle)[0]


def _correspondences(enriched: EnrichedMap, points: np.ndarray, solid: np.ndarray,
                     params: IcpParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cheapest map sample per detection. Returns (kept mask, map indices, costs)."""
    cloud_size = len(enriched.sampled_cloud)
    k = min(NEIGHBOURS_PER_POINT, cloud_size)
    dist, idx = enriched.cloud_tree.query(points, k=k, distance_upper_bound=params.max_correspondence)
    dist = np.asarray(dist, dtype=float).reshape(len(points), k)
    idx = np.asarray(idx).reshape(len(points), k)
    valid = np.isfinite(dist)
    safe_idx = np.where(valid, idx, 0)
    mismatch = enriched.cloud_is_solid[safe_idx] != solid[:, None]
    cost = np.sqrt(dist ** 2 + (mismatch * params.f_type) ** 2)
    cost[~valid] = np.inf
    best = np.argmin(cost, axis=1)
    rows = np.arange(len(points))
    best_cost = cost[rows, best]
    kept = best_cost <= params.max_correspondence
    return kept, safe_idx[rows, best], best_cost


def _alignment_scores(enriched: EnrichedMap, placed: np.ndarray, solid: np.ndarray,
                      params: IcpParams) -> np.ndarray:
    """Mean type-aware cost, truncated at the correspondence gate, of each placement (m, n, 2) -> (m,)."""
    m, n, _ = placed.shape
    gate = params.max_correspondence
    k = min(NEIGHBOURS_PER_SEARCH_POINT, len(enriched.sampled_cloud))
    dist, idx = enriched.cloud_tree.query(placed.reshape(-1, 2), k=k, distance_upper_bound=gate)
    dist = np.asarray(dist, dtype=float).reshape(m * n, k)
    idx = np.asarray(idx).reshape(m * n, k)
    valid = np.isfinite(dist)
    safe_idx = np.where(valid, idx, 0)
    mismatch = enriched.cloud_is_solid[safe_idx] != np.tile(solid, m)[:, None]
    cost = np.sqrt(dist ** 2 + (mismatch * params.f_type) ** 2)
    cost[~valid] = gate
    return np.minimum(cost.min(axis=1), gate).reshape(m, n).mean(axis=1)


def _pick(scores: np.ndarray, values: np.ndarray) -> int:
    # Smallest offset among those within SEARCH_TIE of the best score
    near = np.flatnonzero(scores <= scores.min() + SEARCH_TIE)
    order = np.lexsort((scores[near], np.abs(values[near])))
    return int(near[order[0]])


def _grid(radius: float, step: float) -> np.ndarray:
    n = int(math.floor(radius / step + 1e-9))
    return step * np.arange(-n, n + 1, dtype=float)


def _coarse_search(enriched: EnrichedMap, centered: np.ndarray, pivot: np.ndarray, solid: np.ndarray,
                   init_pose: Pose, params: IcpParams) -> Tuple[float, np.ndarray]:
    """
    Grid search for the starting alignment of ICP: a lateral offset, then a
    longitudinal one, then a rotation about the vehicle position. A second,
    narrower pass refines the offsets under the chosen rotation.
    """
    sub = np.unique(np.linspace(0, len(centered) - 1, min(SEARCH_POINTS, len(centered))).round().astype(int))
    points, types = centered[sub], solid[sub]
    forward, left = _frame_axes(init_pose)
    angles = np.zeros(1)
    if not params.translation_only and params.max_rotation > 0:
        angles = np.radians(_grid(params.max_rotation, params.rotation_step))

    angle = 0.0
    shift = np.zeros(2)
    for radius in (params.search_radius, min(params.search_radius, REFINE_RADIUS)):
        offsets = _grid(radius, params.search_step)
        rotated = _rotate(points, angle)
        for axis in (left, forward):
            moves = shift + offsets[:, None] * axis
            scores = _alignment_scores(enriched, rotated[None] + pivot + moves[:, None, :], types, params)
            shift = moves[_pick(scores, offsets)]
        placed = np.stack([_rotate(points, a) for a in angles]) + pivot + shift
        angle = float(angles[_pick(_alignment_scores(enriched, placed, types, params), angles)])
    return angle, shift


def icp_register(detections: Sequence[TypedPoint], enriched: EnrichedMap, init_pose: Pose,
                 params: Optional[IcpParams] = None,
                 trace: Optional[List[Tuple[float, float]]] = None) -> Tuple[RigidTransform2D, float]:
    """
    Register vehicle-frame lane detections against the enriched map.

    Args:
        detections: Detected lane-marking points in the vehicle frame
        enriched: Enriched map providing the typed sample cloud
        init_pose: Observed pose used to place detections in the map frame
        params: ICP parameters
        trace: If given, receives (before, after) mean squared distances of the
            kept pairs around every alignment substep

    Returns:
        Tuple of (map-frame pose correction about the observed position, mean final correspondence cost)
    """
    params = params or IcpParams()
    if len(detections) < params.min_points:
        raise RegistrationDegenerate(f"Only {len(detections)} detection points (need {params.min_points})")
    if enriched.cloud_tree is None:
        raise RegistrationDegenerate("Enriched map has no lane samples")

    local = np.array([[d.position.x, d.position.y] for d in detections], dtype=float)
    solid = np.array([d.line_type is LineType.SOLID for d in detections], dtype=bool)
    src = to_map_frame(local, init_pose)
    pivot = np.array([init_pose.position.x, init_pose.position.y])
    centered = src - pivot
    spread = float(np.sqrt(np.mean(np.sum(centered ** 2, axis=1))))
    max_rotation = math.radians(params.max_rotation)

    angle = 0.0
    shift = np.zeros(2)
    if params.search_radius > 0:
        angle, shift = _coarse_search(enriched, centered, pivot, solid, init_pose, params)
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        current = _rotate(centered, angle) + pivot + shift
        kept, idx, _ = _correspondences(enriched, current, solid, params)
        if kept.sum() < MIN_CORRESPONDENCES:
            raise RegistrationDegenerate(f"Only {int(kept.sum())} correspondences within {params.max_correspondence} m")
        moving = current[kept] - pivot
        target = enriched.cloud_xy[idx[kept]] - pivot
        before = float(np.mean(np.sum((moving - target) ** 2, axis=1)))

        step_angle, step_shift = _best_fit(moving, target, params.translation_only)
        new_angle = angle + step_angle
        new_shift = _rotate(shift[None, :], step_angle)[0] + step_shift
        if abs(new_angle) > max_rotation:
            new_angle = math.copysign(max_rotation, new_angle)
            original = centered[kept]
            new_shift = np.mean(target - _rotate(original, new_angle), axis=0)
            step_angle = new_angle - angle

        aligned = _rotate(centered[kept], new_angle) + new_shift
        after = float(np.mean(np.sum((aligned - target) ** 2, axis=1)))
        if trace is not None:
            trace.append((before, after))

        change = float(np.hypot(*(new_shift - shift))) + abs(step_angle) * spread
        angle, shift = new_angle, new_shift
        if change < params.convergence_tol:
            break

    final = _rotate(centered, angle) + pivot + shift
    kept, _, costs = _correspondences(enriched, final, solid, params)
    if kept.sum() < MIN_CORRESPONDENCES:
        raise RegistrationDegenerate("Correspondences lost after the final alignment")
    residual = float(np.mean(costs[kept]))
    transform = RigidTransform2D(math.degrees(angle), (float(shift[0]), float(shift[1])), init_pose.position)
    logger.debug(f"ICP converged in {iterations} iterations: rotation={transform.rotation:.3f} deg, "
                 f"translation=({shift[0]:.3f}, {shift[1]:.3f}), residual={residual:.3f}")
    return transform, residual


def lane_context(pose: Pose, enriched: EnrichedMap, radius: float) -> List[LaneContext]:
    """
    Lane markings whose lateral distance from the vehicle does not exceed
    `radius`. Past a marking's end its last segment is extended, for at most
    `radius` along the marking.
    """
    context = []
    for lane_id in enriched.lanes_near(pose.position, radius * math.sqrt(2.0)):
        lateral, overshoot, lane_heading = lateral_offset(enriched.lanes[lane_id].coords, pose.position)
        if lateral <= radius and overshoot <= radius:
            context.append(LaneContext(lane_id, lateral, heading_diff(pose.heading, lane_heading)))
    return context


def lane_emission_factor(pose: Pose, enriched: EnrichedMap, candidates: Iterable[int], sigma: float,
                         eps_heading: float = 1e-4, context_radius: float = 10.0,
                         floor: float = 1e-4) -> dict:
    """
    Log lane-marking factor per candidate road.

    Each nearby lane votes for the roads it is associated with. Its
    association probabilities are first normalized over roads, so a lane
    counts once however many roads it touches, then weighted by a Gaussian of
    its lateral distance and the heading factor. A candidate that no nearby
    lane is associated with takes the mean score of the candidates that have
    votes. Scores are normalized over the candidates; with no vote for any
    candidate every candidate gets the uniform factor 0.

    Returns:
        Dict road id -> log factor
    """
    road_ids = sorted(set(candidates))
    if not road_ids:
        return {}
    context = lane_context(pose, enriched, context_radius)
    scores: Dict[int, float] = {}
    table = enriched.association_table
    for entry in context:
        row = table.get(entry.lane_id, {})
        row_total = math.fsum(row.values())
        if row_total <= 0.0:
            continue
        weight = math.exp(emission_distance(entry.distance, sigma) + emission_heading(entry.delta_theta, eps_heading))
        for rid in road_ids:
            if rid in row:
                scores[rid] = scores.get(rid, 0.0) + row[rid] / row_total * weight
    total = math.fsum(scores.values())
    if total <= 0.0:
        return {rid: 0.0 for rid in road_ids}
    neutral = total / len(scores)
    filled = {rid: scores.get(rid, neutral) for rid in road_ids}
    total = math.fsum(filled.values())
    return {rid: math.log(max(score / total, floor)) for rid, score in filled.items()}
