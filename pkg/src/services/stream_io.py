"""JSONL streams: trajectories, lanes, detections, scenarios, ground truth and match records."""
import json
import logging
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.core.geometry import PointXY, Pose, bearing, project_wgs84
from src.core.icp_localizer import TypedPoint
from src.core.lane_enrichment import LaneMarking, LineType, lane_from_bspline, lane_from_polyline
from src.core.metrics import GroundTruth
from src.core.pipeline import MatchRecord
from src.core.scenario import ScenarioProbs
from src.utils.errors import ParseError
from src.utils.helpers import ANGLE_DECIMALS, PROB_DECIMALS, round_float, write_jsonl

DEFAULT_DETECTION_TOLERANCE = 0.05

logger = logging.getLogger(__name__)


def iter_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line number, object) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"Invalid JSON: {e.msg}", path, line_no)
            if not isinstance(obj, dict):
                raise ParseError("Expected a JSON object", path, line_no)
            yield line_no, obj


def _check_increasing(path: str, line_no: int, t: float, previous: Optional[float]) -> None:
    if previous is not None and t <= previous:
        raise ParseError(f"Timestamp {t} is not after {previous}", path, line_no)


def load_trajectory(path: str, origin: Tuple[float, float]) -> List[Tuple[float, Pose]]:
    """
    Load a trajectory given as lat/lon or local x/y per line.

    Args:
        path: JSONL file path
        origin: (lat, lon) anchor used to project lat/lon records

    Returns:
        List of (t, Pose). Missing headings are derived from consecutive positions.
    """
    rows: List[Tuple[float, PointXY, Optional[float]]] = []
    previous: Optional[float] = None
    for line_no, obj in iter_jsonl(path):
        try:
            t = float(obj["t"])
            if "lat" in obj and "lon" in obj:
                point = project_wgs84(float(obj["lat"]), float(obj["lon"]), origin)
            else:
                point = PointXY(float(obj["x"]), float(obj["y"]))
            heading = obj.get("heading")
            heading = float(heading) if heading is not None else None
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Invalid trajectory record: {e}", path, line_no)
        _check_increasing(path, line_no, t, previous)
        previous = t
        rows.append((t, point, heading))

    derived = derive_headings([p for _, p, _ in rows])
    poses = [(t, Pose(p, h if h is not None else derived[i])) for i, (t, p, h) in enumerate(rows)]
    logger.info(f"Loaded {len(poses)} trajectory points from {path}")
    return poses


def derive_headings(points: Sequence[PointXY]) -> List[float]:
    """Heading of each point toward its successor; the last point and standstills reuse the previous heading."""
    headings: List[float] = []
    current = 0.0
    for i, p in enumerate(points):
        nxt = points[i + 1] if i + 1 < len(points) else None
        if nxt is not None and (nxt.x != p.x or nxt.y != p.y):
            current = bearing(nxt.x - p.x, nxt.y - p.y)
        elif nxt is None and i > 0 and (points[i - 1].x != p.x or points[i - 1].y != p.y):
            current = bearing(p.x - points[i - 1].x, p.y - points[i - 1].y)
        headings.append(current)
    return headings


def write_trajectory(path: str, poses: Sequence[Tuple[float, Pose]]) -> int:
    return write_jsonl(path, (
        {"t": round_float(t), "x": round_float(pose.position.x), "y": round_float(pose.position.y),
         "heading": round_float(pose.heading, ANGLE_DECIMALS)}
        for t, pose in poses
    ))


def load_lanes(path: str, interval: float = 1.0) -> List[LaneMarking]:
    """
    Load lane markings, one per line, as polyline points or B-spline control points.

    Args:
        path: JSONL file path
        interval: Sample spacing for B-splines and for resampling coarse polylines

    Returns:
        Lane markings in file order
    """
    lanes = []
    for line_no, obj in iter_jsonl(path):
        try:
            lane_id = int(obj["lane_id"])
            level = int(obj["level"]) if obj.get("level") is not None else None
            default_type = LineType(obj.get("type_default", LineType.SOLID.value))
            if "bspline" in obj:
                control = [PointXY(float(x), float(y)) for x, y, *_ in obj["bspline"]]
                lanes.append(lane_from_bspline(lane_id, control, interval, default_type, level))
                continue
            points = []
            for entry in obj["points"]:
                x, y = float(entry[0]), float(entry[1])
                heading = entry[2] if len(entry) > 2 else None
                line_type = LineType(entry[3]) if len(entry) > 3 and entry[3] is not None else default_type
                points.append((PointXY(x, y), float(heading) if heading is not None else None, line_type))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ParseError(f"Invalid lane record: {e}", path, line_no)
        lanes.append(lane_from_polyline(lane_id, points, interval, level))
    logger.info(f"Loaded {len(lanes)} lane markings from {path}")
    return lanes


def _lane_record(lane: LaneMarking) -> Dict[str, Any]:
    record: Dict[str, Any] = {"lane_id": lane.lane_id, "type_default": lane.points[0].line_type.value}
    if lane.level is not None:
        record["level"] = lane.level
    record["points"] = [[round_float(p.position.x), round_float(p.position.y), round_float(p.heading, ANGLE_DECIMALS),
                         p.line_type.value] for p in lane.points]
    return record


def write_lanes(path: str, lanes: Sequence[LaneMarking]) -> int:
    return write_jsonl(path, (_lane_record(lane) for lane in lanes))


class DetectionStream:
    """Per-frame lane detections with nearest-timestamp lookup within a tolerance."""

    def __init__(self, frames: Sequence[Tuple[float, Tuple[TypedPoint, ...]]],
                 tolerance: float = DEFAULT_DETECTION_TOLERANCE):
        self.frames = list(frames)
        self.times = np.array([t for t, _ in self.frames], dtype=float)
        self.tolerance = tolerance

    def __len__(self) -> int:
        return len(self.frames)

    def lookup(self, t: float) -> Optional[Tuple[TypedPoint, ...]]:
        if not self.frames:
            return None
        i = int(np.searchsorted(self.times, t))
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(self.times) and (best is None or abs(self.times[j] - t) < abs(self.times[best] - t)):
                best = j
        if abs(self.times[best] - t) > self.tolerance:
            return None
        return self.frames[best][1]


def load_detections(path: str, tolerance: float = DEFAULT_DETECTION_TOLERANCE) -> DetectionStream:
    frames = []
    previous: Optional[float] = None
    for line_no, obj in iter_jsonl(path):
        try:
            t = float(obj["t"])
            points = tuple(
                TypedPoint(PointXY(float(x), float(y)), LineType(line_type))
                for x, y, line_type in obj["points"]
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Invalid detection record: {e}", path, line_no)
        _check_increasing(path, line_no, t, previous)
        previous = t
        frames.append((t, points))
    logger.info(f"Loaded {len(frames)} detection frames from {path}")
    return DetectionStream(frames, tolerance)


def write_detections(path: str, frames: Sequence[Tuple[float, Optional[Sequence[TypedPoint]]]]) -> int:
    """Frames whose detections are None (dropped out) are omitted."""
    return write_jsonl(path, (
        {"t": round_float(t),
         "points": [[round_float(p.position.x), round_float(p.position.y), p.line_type.value] for p in points]}
        for t, points in frames if points is not None
    ))


def write_scenario(path: str, records: Sequence[ScenarioProbs]) -> int:
    return write_jsonl(path, (
        {"t": round_float(r.t), "ordinary": round_float(r.p_ordinary, PROB_DECIMALS),
         "express": round_float(r.p_express, PROB_DECIMALS), "tunnel": round_float(r.p_tunnel, PROB_DECIMALS)}
        for r in records
    ))


def load_truth(path: str) -> GroundTruth:
    """Ground truth JSONL: `{"t", "road_id"}` with optional true `x`, `y`."""
    times, roads, points = [], [], []
    has_points = True
    previous: Optional[float] = None
    for line_no, obj in iter_jsonl(path):
        try:
            t = float(obj["t"])
            road_id = int(obj["road_id"])
            if "x" in obj and "y" in obj:
                points.append(PointXY(float(obj["x"]), float(obj["y"])))
            else:
                has_points = False
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Invalid ground truth record: {e}", path, line_no)
        _check_increasing(path, line_no, t, previous)
        previous = t
        times.append(t)
        roads.append(road_id)
    return GroundTruth(tuple(times), tuple(roads), tuple(points) if has_points and points else None)


def write_truth(path: str, truth: GroundTruth) -> int:
    def row(i: int) -> Dict[str, Any]:
        data: Dict[str, Any] = {"t": round_float(truth.t[i]), "road_id": truth.road_ids[i]}
        if truth.positions is not None:
            data["x"] = round_float(truth.positions[i].x)
            data["y"] = round_float(truth.positions[i].y)
        return data
    return write_jsonl(path, (row(i) for i in range(len(truth))))


def record_to_dict(record: MatchRecord) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "t": round_float(record.t),
        "road_id": record.road_id,
        "x": round_float(record.pose.position.x),
        "y": round_float(record.pose.position.y),
        "heading": round_float(record.pose.heading, ANGLE_DECIMALS),
        "probabilities": {str(rid): round_float(p, PROB_DECIMALS) for rid, p in sorted(record.probabilities.items())},
        "restart": record.restart,
        "degraded": list(record.degraded),
    }
    if record.icp_residual is not None:
        data["icp_residual"] = round_float(record.icp_residual)
    return data


def write_match_records(path: str, online: Sequence[MatchRecord], final: Sequence[MatchRecord]) -> int:
    """One line per online record followed by a summary line holding the finalized sequence."""
    summary = {
        "summary": {
            "final": [rec.road_id for rec in final],
            "matched": sum(1 for rec in final if rec.matched),
            "steps": len(final),
        }
    }
    return write_jsonl(path, [record_to_dict(rec) for rec in online] + [summary])


def load_match_output(path: str) -> Tuple[List[Optional[int]], List[PointXY]]:
    """
    Read a match output file.

    Returns:
        Tuple of (road sequence, per-step positions). The finalized summary
        sequence is used when present, the online road ids otherwise.
    """
    online: List[Optional[int]] = []
    positions: List[PointXY] = []
    final: Optional[List[Optional[int]]] = None
    for line_no, obj in iter_jsonl(path):
        try:
            if "summary" in obj:
                final = [None if r is None else int(r) for r in obj["summary"]["final"]]
                continue
            rid = obj["road_id"]
            online.append(None if rid is None else int(rid))
            positions.append(PointXY(float(obj["x"]), float(obj["y"])))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Invalid match record: {e}", path, line_no)
    if final is not None and len(final) != len(online):
        raise ParseError(f"Summary holds {len(final)} roads for {len(online)} records", path)
    return (final if final is not None else online), positions
