"""
Fused online matcher.

Each observation goes through candidate search, optional ICP re-localization
against the enriched map, the lane and scenario factors, and one Viterbi step.
`finalize` backtracks the whole lattice and revises the online outputs.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

from src.core.geometry import Pose
from src.core.hmm_matcher import (
    EmissionParams,
    MatcherState,
    TransitionParams,
    backtrack,
    best_road,
    step_probabilities,
    viterbi_step,
)
from src.core.icp_localizer import IcpParams, TypedPoint, icp_register, lane_emission_factor
from src.core.lane_enrichment import EnrichedMap
from src.core.road_graph import RoadGraph
from src.core.scenario import DEFAULT_SCENARIO_FLOOR, ScenarioProbs, scenario_emission
from src.utils.errors import EmptyLattice, InputError, RegistrationDegenerate

DEGRADED_ICP = "icp_degenerate"
DEGRADED_NO_CANDIDATES = "no_candidates"


@dataclass(frozen=True)
class Observation:
    t: float
    pose: Pose
    detections: Optional[Tuple[TypedPoint, ...]] = None
    scenario: Optional[ScenarioProbs] = None


@dataclass(frozen=True)
class MatchRecord:
    t: float
    road_id: Optional[int]
    pose: Pose
    probabilities: Dict[int, float] = field(default_factory=dict)
    restart: bool = False
    degraded: Tuple[str, ...] = ()
    icp_residual: Optional[float] = None

    @property
    def matched(self) -> bool:
        return self.road_id is not None


@dataclass(frozen=True)
class PipelineParams:
    emission: EmissionParams = EmissionParams()
    transition: TransitionParams = TransitionParams()
    icp: IcpParams = IcpParams()
    lane_sigma: float = 3.0
    lane_context_radius: float = 10.0
    lane_factor_floor: float = 1e-4
    scenario_floor: float = DEFAULT_SCENARIO_FLOOR
    use_lane_factor: bool = True
    use_scenario_factor: bool = True
    pose_correction: bool = True


class MatchSession:
    """One trajectory matched online; sessions share read-only maps."""

    def __init__(self, graph: RoadGraph, enriched: Optional[EnrichedMap] = None,
                 params: Optional[PipelineParams] = None):
        self.logger = logging.getLogger(__name__)
        self.graph = graph
        self.enriched = enriched
        self.params = params or PipelineParams()
        self.state = MatcherState()
        self.records: List[MatchRecord] = []

    def _register(self, obs: Observation) -> Tuple[Pose, Optional[float], bool]:
        """Corrected pose, ICP residual and whether registration succeeded."""
        if self.enriched is None or not obs.detections:
            return obs.pose, None, False
        try:
            transform, residual = icp_register(obs.detections, self.enriched, obs.pose, self.params.icp)
        except RegistrationDegenerate as e:
            self.logger.warning(f"t={obs.t}: ICP fallback to the observed pose ({e})")
            return obs.pose, None, False
        return transform.apply_pose(obs.pose), residual, True

    def match_step(self, obs: Observation) -> MatchRecord:
        """
        Process one observation and emit its online record.

        Args:
            obs: Observation with a timestamp later than the previous one

        Returns:
            MatchRecord holding the current best road (None when no road is near)
        """
        if self.records and obs.t <= self.records[-1].t:
            raise InputError(f"Observation time {obs.t} is not after {self.records[-1].t}")
        params = self.params
        degraded: List[str] = []

        corrected, residual, registered = self._register(obs)
        if obs.detections and self.enriched is not None and not registered:
            degraded.append(DEGRADED_ICP)
        match_pose = corrected if params.pose_correction else obs.pose

        candidates = self.graph.candidates(match_pose.position, params.emission.candidate_radius)
        extras: Dict[int, float] = {rid: 0.0 for rid, _ in candidates}
        if candidates and registered and params.use_lane_factor:
            lane_factor = lane_emission_factor(
                corrected, self.enriched, extras.keys(), params.lane_sigma,
                params.emission.eps_heading, params.lane_context_radius, params.lane_factor_floor,
            )
            for rid, value in lane_factor.items():
                extras[rid] += value
        if candidates and obs.scenario is not None and params.use_scenario_factor:
            for rid in extras:
                extras[rid] += scenario_emission(obs.scenario, self.graph.road(rid).road_class, params.scenario_floor)

        viterbi_step(self.state, match_pose, self.graph, params.emission, params.transition, extras, candidates)
        step = self.state.steps[-1]
        if not step:
            degraded.append(DEGRADED_NO_CANDIDATES)
            self.logger.info(f"t={obs.t}: no candidate road; lattice restarts")
            road_id = None
        else:
            road_id = best_road(self.state)

        record = MatchRecord(
            t=obs.t,
            road_id=road_id,
            pose=corrected,
            probabilities=step_probabilities(step),
            restart=not step,
            degraded=tuple(degraded),
            icp_residual=residual,
        )
        self.records.append(record)
        return record

    def finalize(self) -> List[MatchRecord]:
        """
        Backtrack the lattice and return the authoritative records.

        Returns:
            One record per processed observation with the backtracked road

        Raises:
            EmptyLattice: if no observation was processed
        """
        if not self.records:
            raise EmptyLattice("No observation was processed")
        try:
            sequence = backtrack(self.state)
        except EmptyLattice:
            self.logger.warning("No step had a candidate road; every record is unmatched")
            sequence = [None] * len(self.records)
        revised = sum(1 for rec, rid in zip(self.records, sequence) if rec.road_id != rid)
        if revised:
            self.logger.info(f"Backtracking revised {revised} of {len(self.records)} online outputs")
        return [replace(rec, road_id=rid) for rec, rid in zip(self.records, sequence)]

    @property
    def ever_matched(self) -> bool:
        return any(rec.matched for rec in self.records)


def run_session(graph: RoadGraph, observations: Iterable[Observation], enriched: Optional[EnrichedMap] = None,
                params: Optional[PipelineParams] = None) -> Tuple[List[MatchRecord], List[MatchRecord]]:
    """Match a whole trajectory. Returns (online records, finalized records)."""
    session = MatchSession(graph, enriched, params)
    for obs in observations:
        session.match_step(obs)
    online = list(session.records)
    return online, session.finalize()
