import pytest

from src.core.geometry import PointXY
from src.core.metrics import (
    GroundTruth,
    evaluate,
    match_rate,
    precision_recall_f1,
    scores_from_lengths,
    traversal_lengths,
)
from src.core.road_graph import RoadGraph
from src.utils.errors import DegenerateEval, LengthMismatch
from tests.conftest import make_road

XS = [10, 40, 70, 130, 160, 190]
TRUE_ROADS = (1, 1, 1, 2, 2, 2)


@pytest.fixture
def line_graph():
    return RoadGraph([make_road(1, [(0, 0), (100, 0)]), make_road(2, [(100, 0), (200, 0)])])


@pytest.fixture
def truth():
    return GroundTruth(tuple(float(t) for t in range(len(XS))), TRUE_ROADS,
                       tuple(PointXY(float(x), 0.0) for x in XS))


def counting_truth(n):
    return GroundTruth(tuple(float(t) for t in range(n)), tuple(range(n)))


def test_match_rate_counts():
    truth = counting_truth(10)
    pred = list(range(10))
    assert match_rate(pred, truth) == 1.0
    pred[3] = 99
    pred[7] = None
    assert match_rate(pred, truth) == pytest.approx(0.8)
    assert match_rate([None] * 10, truth) == 0.0


def test_match_rate_errors():
    with pytest.raises(LengthMismatch):
        match_rate([1, 2], counting_truth(3))
    with pytest.raises(DegenerateEval):
        match_rate([], counting_truth(0))
    with pytest.raises(LengthMismatch):
        GroundTruth((0.0, 1.0), (1,))


def test_scores_from_lengths():
    precision, recall, f1 = scores_from_lengths(80.0, 100.0, 90.0)
    assert round(precision, 6) == 0.8
    assert round(recall, 6) == 0.888889
    assert round(f1, 6) == 0.842105
    assert f1 == pytest.approx(2 * precision * recall / (precision + recall))
    assert scores_from_lengths(0.0, 10.0, 10.0) == (0.0, 0.0, 0.0)
    with pytest.raises(DegenerateEval):
        scores_from_lengths(0.0, 0.0, 10.0)
    with pytest.raises(DegenerateEval):
        scores_from_lengths(0.0, 10.0, 0.0)


def test_traversal_lengths(line_graph, truth):
    deltas = traversal_lengths(list(TRUE_ROADS), truth.positions, line_graph)
    assert deltas == pytest.approx([0.0, 30.0, 30.0, 60.0, 30.0, 30.0])
    with_gap = traversal_lengths([1, 1, None, 2, 2, 2], truth.positions, line_graph)
    assert with_gap == pytest.approx([0.0, 30.0, 0.0, 0.0, 30.0, 30.0])


def test_perfect_match(line_graph, truth):
    report = evaluate(list(TRUE_ROADS), truth, line_graph)
    assert (report.match_rate, report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0, 1.0)
    assert report.n_correct == report.n_all == len(XS)
    assert report.l_gt == pytest.approx(180.0)


def test_late_switch(line_graph, truth):
    pred = [1, 1, 1, 1, 2, 2]
    precision, recall, f1 = precision_recall_f1(pred, truth, line_graph)
    assert precision == pytest.approx(120.0 / 180.0)
    assert recall == pytest.approx(120.0 / 180.0)
    # Equal precision and recall give the same F1
    assert f1 == pytest.approx(precision)
    report = evaluate(pred, truth, line_graph)
    assert report.match_rate == pytest.approx(5.0 / 6.0)
    assert 0.0 <= report.precision <= 1.0 and 0.0 <= report.recall <= 1.0


def test_time_shift_leaves_metrics_unchanged(line_graph, truth):
    shifted = GroundTruth(tuple(t + 1000.0 for t in truth.t), truth.road_ids, truth.positions)
    pred = [1, 2, 1, 2, 2, 1]
    assert evaluate(pred, truth, line_graph) == evaluate(pred, shifted, line_graph)


def test_unmatched_prediction_is_degenerate(line_graph, truth):
    with pytest.raises(DegenerateEval):
        evaluate([None] * len(XS), truth, line_graph)


def test_positions_are_required(line_graph):
    bare = GroundTruth(tuple(float(t) for t in range(len(XS))), TRUE_ROADS)
    with pytest.raises(DegenerateEval):
        evaluate(list(TRUE_ROADS), bare, line_graph)
    positions = [PointXY(float(x), 0.0) for x in XS]
    assert evaluate(list(TRUE_ROADS), bare, line_graph, positions).f1 == 1.0


def test_report_as_dict(line_graph, truth):
    data = evaluate(list(TRUE_ROADS), truth, line_graph).as_dict()
    assert data["n_all"] == 6
    assert data["l_mm"] == 180.0
    assert set(data) == {"match_rate", "precision", "recall", "f1", "n_correct", "n_all", "l_correct", "l_mm", "l_gt"}
