"""
Evaluation of matched road sequences against ground truth.

Traversed lengths are measured from per-step arc-length progress: at each step
the position is projected onto the step's road and the advance since the
previous step is accumulated. On a road change the advance is the remainder of
the previous road plus the arc covered on the new one.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

from src.core.geometry import PointXY
from src.core.road_graph import RoadGraph, project_point
from src.utils.errors import DegenerateEval, LengthMismatch
from src.utils.helpers import round_float

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    t: Tuple[float, ...]
    road_ids: Tuple[int, ...]
    positions: Optional[Tuple[PointXY, ...]] = None

    def __post_init__(self):
        if len(self.t) != len(self.road_ids):
            raise LengthMismatch(f"Ground truth has {len(self.t)} timestamps and {len(self.road_ids)} roads")
        if self.positions is not None and len(self.positions) != len(self.road_ids):
            raise LengthMismatch(f"Ground truth has {len(self.positions)} positions for {len(self.road_ids)} roads")

    def __len__(self) -> int:
        return len(self.road_ids)


@dataclass(frozen=True)
class EvalReport:
    match_rate: float
    precision: float
    recall: float
    f1: float
    n_correct: int
    n_all: int
    l_correct: float
    l_mm: float
    l_gt: float

    def as_dict(self) -> dict:
        return {key: value if isinstance(value, int) else round_float(value) for key, value in asdict(self).items()}


def _check_lengths(pred: Sequence[Optional[int]], truth: GroundTruth) -> None:
    if len(pred) != len(truth):
        raise LengthMismatch(f"Predicted sequence has {len(pred)} steps, ground truth has {len(truth)}")


def match_rate(pred: Sequence[Optional[int]], truth: GroundTruth) -> float:
    """Fraction of steps matched to the true road. Unmatched steps count as wrong."""
    _check_lengths(pred, truth)
    if not pred:
        raise DegenerateEval("Cannot compute a match rate over zero steps")
    correct = sum(1 for p, g in zip(pred, truth.road_ids) if p is not None and p == g)
    return correct / len(pred)


def traversal_lengths(roads: Sequence[Optional[int]], points: Sequence[PointXY], graph: RoadGraph) -> List[float]:
    """Per-step traversed length along the given road sequence (0 for the first step and unmatched steps)."""
    deltas = [0.0] * len(roads)
    prev_road: Optional[int] = None
    prev_arc = 0.0
    for k, (rid, point) in enumerate(zip(roads, points)):
        if rid is None:
            prev_road = None
            continue
        road = graph.road(rid)
        arc = project_point(road, point).arc_offset
        if prev_road is None:
            delta = 0.0
        elif rid == prev_road:
            delta = arc - prev_arc
        else:
            delta = graph.road(prev_road).length - prev_arc + arc
        deltas[k] = max(delta, 0.0)
        prev_road, prev_arc = rid, arc
    return deltas


def scores_from_lengths(l_correct: float, l_mm: float, l_gt: float) -> Tuple[float, float, float]:
    """
    Precision, recall and F1 from traversal lengths.

    Args:
        l_correct: Length matched to the correct road
        l_mm: Total matched length
        l_gt: Total ground-truth length

    Returns:
        Tuple of (precision, recall, f1)
    """
    if l_mm <= 0.0:
        raise DegenerateEval("Matched length is zero")
    if l_gt <= 0.0:
        raise DegenerateEval("Ground-truth length is zero")
    precision = l_correct / l_mm
    recall = l_correct / l_gt
    f1 = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def _resolve_points(truth: GroundTruth, positions: Optional[Sequence[PointXY]]) -> Tuple[Sequence[PointXY], Sequence[PointXY]]:
    truth_points = truth.positions if truth.positions is not None else positions
    pred_points = positions if positions is not None else truth.positions
    if truth_points is None or pred_points is None:
        raise DegenerateEval("Length metrics need positions in the ground truth or the matched output")
    if len(pred_points) != len(truth):
        raise LengthMismatch(f"{len(pred_points)} positions for {len(truth)} steps")
    return pred_points, truth_points


def precision_recall_f1(pred: Sequence[Optional[int]], truth: GroundTruth, graph: RoadGraph,
                        positions: Optional[Sequence[PointXY]] = None) -> Tuple[float, float, float]:
    """Length-based precision, recall and F1 of a matched sequence."""
    _check_lengths(pred, truth)
    pred_points, truth_points = _resolve_points(truth, positions)
    l_correct, l_mm, l_gt = _lengths(pred, truth, graph, pred_points, truth_points)
    return scores_from_lengths(l_correct, l_mm, l_gt)


def _lengths(pred, truth: GroundTruth, graph: RoadGraph, pred_points, truth_points) -> Tuple[float, float, float]:
    pred_deltas = traversal_lengths(pred, pred_points, graph)
    truth_deltas = traversal_lengths(truth.road_ids, truth_points, graph)
    correct = [
        min(p_delta, g_delta)
        for p, g, p_delta, g_delta in zip(pred, truth.road_ids, pred_deltas, truth_deltas)
        if p is not None and p == g
    ]
    return math.fsum(correct), math.fsum(pred_deltas), math.fsum(truth_deltas)


def evaluate(pred: Sequence[Optional[int]], truth: GroundTruth, graph: RoadGraph,
             positions: Optional[Sequence[PointXY]] = None) -> EvalReport:
    """Full evaluation report of a matched sequence."""
    _check_lengths(pred, truth)
    rate = match_rate(pred, truth)
    pred_points, truth_points = _resolve_points(truth, positions)
    l_correct, l_mm, l_gt = _lengths(pred, truth, graph, pred_points, truth_points)
    precision, recall, f1 = scores_from_lengths(l_correct, l_mm, l_gt)
    n_correct = sum(1 for p, g in zip(pred, truth.road_ids) if p is not None and p == g)
    logger.debug(f"Evaluation: match_rate={rate:.4f}, precision={precision:.4f}, recall={recall:.4f}, f1={f1:.4f}")
    return EvalReport(rate, precision, recall, f1, n_correct, len(pred), l_correct, l_mm, l_gt)
