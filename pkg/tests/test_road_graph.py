import math

import numpy as np
import pytest

from src.core.geometry import PointXY
from src.core.road_graph import REVERSE_ID_OFFSET, RoadGraph
from src.utils.errors import ConfigError, MapFormatError, UnknownRoad
from tests.conftest import make_road


def test_successors_derived_from_shared_endpoints(chain_graph):
    assert chain_graph.successors(1) == (2, 3)
    assert chain_graph.successors(2) == (4,)
    assert chain_graph.successors(5) == ()
    assert chain_graph.predecessors(2) == (1,)
    assert chain_graph.predecessors(1) == ()


def test_explicit_successors_override_snapping():
    graph = RoadGraph([
        make_road(1, [(0, 0), (10, 0)], successors=()),
        make_road(2, [(10, 0), (20, 0)]),
    ])
    assert graph.successors(1) == ()
    with pytest.raises(UnknownRoad):
        RoadGraph([make_road(1, [(0, 0), (10, 0)], successors=(9,))])


def test_road_validation():
    with pytest.raises(MapFormatError):
        make_road(1, [(0, 0)])
    with pytest.raises(MapFormatError):
        make_road(1, [(0, 0), (0, 0), (1, 0)])
    with pytest.raises(MapFormatError):
        RoadGraph([make_road(1, [(0, 0), (1, 0)]), make_road(1, [(1, 0), (2, 0)])])


def test_unknown_road_lookup(chain_graph):
    with pytest.raises(UnknownRoad):
        chain_graph.road(99)
    with pytest.raises(UnknownRoad):
        chain_graph.successors(99)


def test_candidates_within_radius(chain_graph):
    hits = chain_graph.candidates(PointXY(50.0, 10.0), 20.0)
    assert [rid for rid, _ in hits] == [1]
    assert hits[0][1].distance == pytest.approx(10.0)
    assert chain_graph.candidates(PointXY(50.0, 500.0), 20.0) == []
    with pytest.raises(ConfigError):
        chain_graph.candidates(PointXY(0.0, 0.0), 0.0)


def test_candidates_match_exhaustive_scan(chain_graph):
    rng = np.random.default_rng(7)
    for x, y in rng.uniform(-50.0, 450.0, size=(200, 2)):
        p = PointXY(float(x), float(y))
        for radius in (5.0, 30.0, 120.0):
            indexed = [(rid, proj.distance) for rid, proj in chain_graph.candidates(p, radius)]
            scanned = [(rid, proj.distance) for rid, proj in chain_graph.candidates_scan(p, radius)]
            assert indexed == scanned


def test_min_connected_distance(chain_graph):
    assert chain_graph.min_connected_distance(1, 1) == 0.0
    assert chain_graph.min_connected_distance(1, 2) == 0.0
    assert chain_graph.min_connected_distance(1, 4) == pytest.approx(100.0)
    assert chain_graph.min_connected_distance(1, 5) == pytest.approx(200.0)
    assert chain_graph.min_connected_distance(1, 5, cap=150.0) is None
    assert chain_graph.min_connected_distance(2, 1) is None
    assert chain_graph.min_connected_distance(3, 2) is None


def test_two_way_twin_does_not_continue_into_itself():
    road = make_road(10, [(0, 0), (0, 100)])
    graph = RoadGraph([road, road.reversed_twin()])
    twin_id = 10 + REVERSE_ID_OFFSET
    assert twin_id in graph
    assert graph.road(twin_id).twin_of == 10
    assert graph.successors(10) == ()
    assert graph.successors(twin_id) == ()
    assert graph.road(twin_id).start == PointXY(0.0, 100.0)


def test_is_connected_sequence(chain_graph):
    assert chain_graph.is_connected_sequence([1, 1, 2, 4, 5])
    assert not chain_graph.is_connected_sequence([1, 4])


def test_with_road_leaves_receiver_untouched(chain_graph):
    extended = chain_graph.with_road(make_road(6, [(400, 0), (500, 0)]))
    assert 6 in extended
    assert 6 not in chain_graph
    assert extended.successors(5) == (6,)


def test_connected_distance_grows_along_a_path(chain_graph):
    distances = [chain_graph.min_connected_distance(1, rid) for rid in (1, 2, 4, 5)]
    assert distances == sorted(distances)


def test_adding_a_road_never_lengthens_a_connection(chain_graph):
    # A link from the dead end of road 3 to the start of road 5
    extended = chain_graph.with_road(make_road(7, [(100, 100), (300, 0)]))
    for a in chain_graph.road_ids():
        for b in chain_graph.road_ids():
            before = chain_graph.min_connected_distance(a, b)
            after = extended.min_connected_distance(a, b)
            if before is not None:
                assert after is not None and after <= before + 1e-9
    assert chain_graph.min_connected_distance(3, 5) is None
    assert extended.min_connected_distance(3, 5) == pytest.approx(math.hypot(200.0, 100.0))
