import numpy as np
import pytest

from src.core.geometry import PointXY, Pose
from src.core.icp_localizer import TypedPoint, to_vehicle_frame
from src.core.pipeline import (
    DEGRADED_ICP,
    DEGRADED_NO_CANDIDATES,
    MatchSession,
    Observation,
    PipelineParams,
    run_session,
)
from src.core.scenario import ScenarioProbs
from src.utils.errors import EmptyLattice, InputError
from tests.conftest import eastbound_poses

BASELINE = PipelineParams(use_lane_factor=False, use_scenario_factor=False, pose_correction=False)
XS = [20, 50, 80, 110, 140]


def detections_from(enriched, true_pose, forward=20.0, lateral=8.0):
    local = to_vehicle_frame(enriched.cloud_xy, true_pose)
    mask = (local[:, 0] >= 0.0) & (local[:, 0] <= forward) & (np.abs(local[:, 1]) <= lateral)
    types = [c.line_type for c, keep in zip(enriched.sampled_cloud, mask) if keep]
    return tuple(TypedPoint(PointXY(float(x), float(y)), t) for (x, y), t in zip(local[mask], types))


def biased_drive(enriched, bias=2.0, y_true=-3.5):
    """Vehicle on the ramp (y = -3.5) observed with a northward bias towards the main road."""
    observations = []
    for t, true_pose in enumerate(eastbound_poses(XS, y_true)):
        observed = Pose(PointXY(true_pose.position.x, y_true + bias), 90.0)
        observations.append(Observation(float(t), observed, detections_from(enriched, true_pose)))
    return observations


def test_scenario_factor_separates_parallel_roads(parallel_graph):
    poses = eastbound_poses(XS, 2.5)
    plain = [Observation(float(t), pose) for t, pose in enumerate(poses)]
    _, final = run_session(parallel_graph, plain)
    # Equidistant roads: the tie goes to the smaller id
    assert [rec.road_id for rec in final] == [1] * len(XS)

    express = ScenarioProbs(0.0, 0.1, 0.9, 0.0)
    informed = [Observation(float(t), pose, scenario=express) for t, pose in enumerate(poses)]
    _, final = run_session(parallel_graph, informed)
    assert [rec.road_id for rec in final] == [2] * len(XS)

    _, ablated = run_session(parallel_graph, informed, params=PipelineParams(use_scenario_factor=False))
    assert [rec.road_id for rec in ablated] == [1] * len(XS)


def test_baseline_drifts_to_the_main_road(split_enriched):
    observations = biased_drive(split_enriched)
    _, final = run_session(split_enriched.graph, observations, None, BASELINE)
    assert [rec.road_id for rec in final] == [1] * len(XS)


def test_lane_registration_recovers_the_ramp(split_enriched):
    observations = biased_drive(split_enriched)
    online, final = run_session(split_enriched.graph, observations, split_enriched, PipelineParams())
    assert [rec.road_id for rec in final] == [2] * len(XS)
    for rec in online:
        assert rec.degraded == ()
        assert rec.icp_residual is not None and rec.icp_residual < 0.1
        assert rec.pose.position.y == pytest.approx(-3.5, abs=0.05)


def test_lane_factor_alone_recovers_the_ramp(split_enriched):
    observations = biased_drive(split_enriched)
    params = PipelineParams(pose_correction=False, use_scenario_factor=False)
    _, final = run_session(split_enriched.graph, observations, split_enriched, params)
    assert [rec.road_id for rec in final] == [2] * len(XS)


def test_sparse_detections_degrade_to_the_raw_pose(split_enriched):
    observations = [
        Observation(obs.t, obs.pose, obs.detections[:2]) for obs in biased_drive(split_enriched)
    ]
    online, _ = run_session(split_enriched.graph, observations, split_enriched, PipelineParams())
    for obs, rec in zip(observations, online):
        assert DEGRADED_ICP in rec.degraded
        assert rec.icp_residual is None
        assert rec.pose == obs.pose


def test_off_map_observation_restarts(parallel_graph):
    poses = eastbound_poses([20, 50], 0.0) + [Pose(PointXY(5000.0, 5000.0), 90.0)] + eastbound_poses([110], 0.0)
    session = MatchSession(parallel_graph)
    records = [session.match_step(Observation(float(t), pose)) for t, pose in enumerate(poses)]
    assert records[2].road_id is None
    assert records[2].restart
    assert DEGRADED_NO_CANDIDATES in records[2].degraded
    assert records[2].probabilities == {}
    assert records[3].road_id == 1
    final = session.finalize()
    assert [rec.road_id for rec in final] == [1, 1, None, 1]
    assert sum(records[0].probabilities.values()) == pytest.approx(1.0)


def test_timestamps_must_increase(parallel_graph):
    session = MatchSession(parallel_graph)
    pose = Pose(PointXY(10.0, 0.0), 90.0)
    session.match_step(Observation(1.0, pose))
    with pytest.raises(InputError):
        session.match_step(Observation(1.0, pose))


def test_finalize_edge_cases(parallel_graph):
    with pytest.raises(EmptyLattice):
        MatchSession(parallel_graph).finalize()
    session = MatchSession(parallel_graph)
    session.match_step(Observation(0.0, Pose(PointXY(9000.0, 9000.0), 0.0)))
    assert not session.ever_matched
    assert [rec.road_id for rec in session.finalize()] == [None]
