"""
Planar geometry primitives shared by every matcher component.

Coordinates are local meters (x east, y north) obtained by an equirectangular
projection around a fixed per-dataset origin. Headings follow the compass
convention: 0 degrees is north and angles grow clockwise.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.utils.errors import InvalidCoordinate

EARTH_RADIUS_M = 6371008.8
COORD_LIMIT = 1e7
# Local equirectangular projection is only used close to the origin
MAX_ORIGIN_OFFSET_DEG = 1.0


@dataclass(frozen=True)
class PointXY:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidCoordinate(f"Non-finite coordinate ({self.x}, {self.y})")
        if abs(self.x) >= COORD_LIMIT or abs(self.y) >= COORD_LIMIT:
            raise InvalidCoordinate(f"Coordinate out of range ({self.x}, {self.y})")

    def distance_to(self, other: "PointXY") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Pose:
    position: PointXY
    heading: float

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise InvalidCoordinate(f"Non-finite heading {self.heading}")
        object.__setattr__(self, "heading", normalize_heading(self.heading))


@dataclass(frozen=True)
class Projection:
    """Result of projecting a point onto a polyline."""
    distance: float
    point: PointXY
    road_heading: float
    on_segment: bool
    arc_offset: float


def normalize_heading(theta: float) -> float:
    """Wrap a heading into [0, 360)."""
    wrapped = math.fmod(theta, 360.0)
    if wrapped < 0:
        wrapped += 360.0
    # fmod of a tiny negative value can round up to exactly 360
    return 0.0 if wrapped >= 360.0 else wrapped


def heading_diff(theta_a: float, theta_b: float) -> float:
    """Included angle between two headings, in [0, 180]."""
    delta = math.fmod(abs(theta_a - theta_b), 360.0)
    return min(delta, 360.0 - delta)


def bearing(dx: float, dy: float) -> float:
    """Compass bearing of a displacement vector (0 = north, clockwise)."""
    return normalize_heading(math.degrees(math.atan2(dx, dy)))


def project_wgs84(lat: float, lon: float, origin: Tuple[float, float]) -> PointXY:
    """
    Project WGS84 coordinates to local meters around `origin` (lat, lon).

    Args:
        lat: Latitude in degrees
        lon: Longitude in degrees
        origin: (lat, lon) anchor of the local frame

    Returns:
        Local planar point
    """
    lat0, lon0 = origin
    if not is_valid_latlon(lat, lon) or not is_valid_latlon(lat0, lon0):
        raise InvalidCoordinate(f"Coordinate out of range: lat={lat}, lon={lon}, origin={origin}")
    if abs(lat - lat0) > MAX_ORIGIN_OFFSET_DEG or abs(lon - lon0) > MAX_ORIGIN_OFFSET_DEG:
        raise InvalidCoordinate(f"Coordinate ({lat}, {lon}) is more than {MAX_ORIGIN_OFFSET_DEG} deg from origin {origin}")
    scale = EARTH_RADIUS_M * math.pi / 180.0
    x = (lon - lon0) * math.cos(math.radians(lat0)) * scale
    y = (lat - lat0) * scale
    return PointXY(x, y)


def unproject_xy(point: PointXY, origin: Tuple[float, float]) -> Tuple[float, float]:
    """Inverse of `project_wgs84`. Returns (lat, lon)."""
    lat0, lon0 = origin
    scale = EARTH_RADIUS_M * math.pi / 180.0
    lat = lat0 + point.y / scale
    lon = lon0 + point.x / (scale * math.cos(math.radians(lat0)))
    return lat, lon


def is_valid_latlon(lat: float, lon: float) -> bool:
    return math.isfinite(lat) and math.isfinite(lon) and abs(lat) <= 90 and abs(lon) <= 180


def polyline_array(points: Sequence[PointXY]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in points], dtype=float)


def polyline_length(coords: np.ndarray) -> float:
    return float(np.hypot(*np.diff(coords, axis=0).T).sum())


def project_onto_polyline(coords: np.ndarray, p: PointXY) -> Projection:
    """
    Project a point onto a polyline given as an (n, 2) array.

    The perpendicular foot is used when it falls inside a segment, otherwise the
    nearest endpoint. Ties between segments resolve to the earliest segment.
    """
    a = coords[:-1]
    ab = coords[1:] - a
    ap = np.array([p.x, p.y]) - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", ap, ab) / seg_len2
    tc = np.clip(t, 0.0, 1.0)
    feet = a + tc[:, None] * ab
    dists = np.hypot(feet[:, 0] - p.x, feet[:, 1] - p.y)
    i = int(np.argmin(dists))

    last = len(t) - 1
    on_segment = not ((i == 0 and t[i] < 0.0) or (i == last and t[i] > 1.0))
    seg_lengths = np.sqrt(seg_len2)
    arc_offset = float(seg_lengths[:i].sum() + tc[i] * seg_lengths[i])
    return Projection(
        distance=float(dists[i]),
        point=PointXY(float(feet[i, 0]), float(feet[i, 1])),
        road_heading=bearing(float(ab[i, 0]), float(ab[i, 1])),
        on_segment=on_segment,
        arc_offset=arc_offset,
    )


def lateral_offset(coords: np.ndarray, p: PointXY) -> Tuple[float, float, float]:
    """
    Sideways distance of a point from a polyline, extending the end segments
    past the polyline's ends.

    Returns:
        Tuple of (lateral distance, overshoot beyond the nearer end (0 when the
        point projects inside the polyline), bearing of the segment used)
    """
    projection = project_onto_polyline(coords, p)
    if projection.on_segment:
        return projection.distance, 0.0, projection.road_heading
    at_start = projection.arc_offset == 0.0
    a, b = (coords[0], coords[1]) if at_start else (coords[-2], coords[-1])
    direction = (b - a) / np.hypot(*(b - a))
    delta = np.array([p.x, p.y]) - (a if at_start else b)
    along = float(delta @ direction)
    lateral = abs(float(direction[0] * delta[1] - direction[1] * delta[0]))
    return lateral, abs(along), projection.road_heading


def point_at_arc(coords: np.ndarray, arc: float) -> Tuple[PointXY, float]:
    """Point and segment bearing at arc length `arc` along a polyline (clamped to its ends)."""
    seg = np.diff(coords, axis=0)
    seg_lengths = np.hypot(seg[:, 0], seg[:, 1])
    cumulative = np.concatenate([[0.0], np.cumsum(seg_lengths)])
    arc = min(max(arc, 0.0), float(cumulative[-1]))
    i = int(np.searchsorted(cumulative, arc, side="right") - 1)
    i = min(max(i, 0), len(seg_lengths) - 1)
    frac = (arc - cumulative[i]) / seg_lengths[i]
    xy = coords[i] + frac * seg[i]
    return PointXY(float(xy[0]), float(xy[1])), bearing(float(seg[i, 0]), float(seg[i, 1]))


def offset_polyline(coords: np.ndarray, offset: float) -> np.ndarray:
    """Shift a polyline sideways; positive offsets go to the left of the travel direction."""
    seg = np.diff(coords, axis=0)
    normals = np.column_stack([-seg[:, 1], seg[:, 0]])
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    # Vertex normals: average of adjacent segment normals
    vertex_normals = np.empty_like(coords)
    vertex_normals[0] = normals[0]
    vertex_normals[-1] = normals[-1]
    if len(coords) > 2:
        mid = normals[:-1] + normals[1:]
        mid /= np.hypot(mid[:, 0], mid[:, 1])[:, None]
        # Keep the offset distance constant across the corner
        cos_half = np.einsum("ij,ij->i", mid, normals[1:])
        vertex_normals[1:-1] = mid / cos_half[:, None]
    return coords + offset * vertex_normals


def resample_polyline(coords: np.ndarray, interval: float, min_spacing: float = 0.2) -> Tuple[np.ndarray, np.ndarray]:
    """
    Resample a polyline at uniform arc-length spacing.

    Returns:
        Tuple of (points (m, 2), bearings (m,) in degrees)
    """
    seg = np.diff(coords, axis=0)
    seg_lengths = np.hypot(seg[:, 0], seg[:, 1])
    total = float(seg_lengths.sum())
    targets = np.arange(0.0, total, interval)
    if total - targets[-1] >= min_spacing:
        targets = np.append(targets, total)
    points = []
    headings = []
    for s in targets:
        point, heading = point_at_arc(coords, float(s))
        points.append([point.x, point.y])
        headings.append(heading)
    return np.array(points, dtype=float), np.array(headings, dtype=float)
