"""
Online HMM map matcher.

Emission factors (distance and heading), the connectivity transition factor,
and a Viterbi lattice advanced one observation at a time. All arithmetic is
carried out in the log domain; the lattice is renormalized after every step so
the values of each step form a distribution over its candidate roads.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from scipy.special import logsumexp

from src.core.geometry import Pose, Projection, heading_diff
from src.core.road_graph import DEFAULT_CANDIDATE_RADIUS, DEFAULT_PATH_CAP, RoadGraph
from src.utils.errors import ConfigError, EmptyLattice

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmissionParams:
    sigma: float = 20.0
    eps_heading: float = 1e-4
    candidate_radius: float = DEFAULT_CANDIDATE_RADIUS

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.eps_heading < 1:
            raise ConfigError(f"eps_heading must be in (0, 1), got {self.eps_heading}")
        if not self.candidate_radius > 0:
            raise ConfigError(f"candidate_radius must be positive, got {self.candidate_radius}")


@dataclass(frozen=True)
class TransitionParams:
    gamma: float = 50.0
    eps_transition: float = 1e-4
    path_cap: float = DEFAULT_PATH_CAP

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.eps_transition < 1:
            raise ConfigError(f"eps_transition must be in (0, 1), got {self.eps_transition}")
        if not self.path_cap > 0:
            raise ConfigError(f"path_cap must be positive, got {self.path_cap}")


@dataclass(frozen=True)
class LatticeNode:
    road_id: int
    log_joint: float
    backpointer: Optional[int]
    projection: Optional[Projection] = None


@dataclass
class MatcherState:
    """
    Viterbi lattice of one trajectory.

    An empty step is a restart boundary: the following step is initialized
    from its emissions only.
    """
    steps: List[Dict[int, LatticeNode]] = field(default_factory=list)
    normalize: bool = True

    @property
    def restarts(self) -> List[bool]:
        return [not step for step in self.steps]

    @property
    def current_best(self) -> Optional[int]:
        if not self.steps or not self.steps[-1]:
            return None
        return _argmax(self.steps[-1])


def emission_distance(d: float, sigma: float) -> float:
    """Log of the zero-mean Gaussian density of the distance to a road."""
    return -(d * d) / (2.0 * sigma * sigma) - math.log(sigma) - LOG_SQRT_2PI


def emission_heading(delta_theta: float, eps1: float) -> float:
    """
    Log heading factor. Aligned headings score 1; beyond 90 degrees (U-turns,
    reverse driving) the factor is the floor `eps1`, and the cosine branch is
    floored at `eps1` too so the factor stays continuous at 90 degrees.
    """
    if delta_theta < 90.0:
        value = (1.0 + math.cos(math.radians(2.0 * delta_theta))) / 2.0
        return math.log(max(value, eps1))
    return math.log(eps1)


def transition(graph: RoadGraph, r_from: int, r_to: int, params: TransitionParams) -> float:
    """Log transition factor from `r_from` to `r_to`, decaying with connected distance."""
    distance = graph.min_connected_distance(r_from, r_to, params.path_cap)
    if distance is None:
        return math.log(params.eps_transition)
    if distance == 0.0:
        return 0.0
    return -distance / params.gamma


def _argmax(step: Mapping[int, LatticeNode]) -> int:
    # Ties resolve to the smallest road id
    return min(step, key=lambda rid: (-step[rid].log_joint, rid))


def advance(state: MatcherState, emission_logs: Mapping[int, float],
            transition_log: Callable[[int, int], float],
            projections: Optional[Mapping[int, Projection]] = None) -> MatcherState:
    """
    Advance the lattice by one step given per-candidate log emissions.

    Args:
        state: Lattice to extend (modified in place)
        emission_logs: Total log emission per candidate road of this step
        transition_log: Log transition factor between two road ids
        projections: Optional per-candidate projection kept on the nodes

    Returns:
        The updated state
    """
    previous = state.steps[-1] if state.steps else {}
    prev_ids = sorted(previous)
    nodes: Dict[int, LatticeNode] = {}
    for rid in sorted(emission_logs):
        best_prev = None
        best_score = -math.inf
        for pid in prev_ids:
            score = previous[pid].log_joint + transition_log(pid, rid)
            if score > best_score:
                best_score = score
                best_prev = pid
        value = emission_logs[rid] if best_prev is None else best_score + emission_logs[rid]
        nodes[rid] = LatticeNode(rid, value, best_prev, projections.get(rid) if projections else None)

    if nodes and state.normalize:
        shift = float(logsumexp([node.log_joint for node in nodes.values()]))
        nodes = {rid: LatticeNode(rid, node.log_joint - shift, node.backpointer, node.projection)
                 for rid, node in nodes.items()}
    elif not nodes:
        logger.debug(f"Step {len(state.steps)} has no candidates; restart boundary recorded")
    state.steps.append(nodes)
    return state


def viterbi_step(state: MatcherState, pose: Pose, graph: RoadGraph, emission: EmissionParams,
                 transition_params: TransitionParams,
                 extra_log_factors: Optional[Mapping[int, float]] = None,
                 candidates: Optional[Sequence[Tuple[int, Projection]]] = None) -> MatcherState:
    """
    One Viterbi recursion step for an observed pose.

    Args:
        state: Lattice to extend
        pose: Observed vehicle pose
        graph: Road network
        emission: Emission parameters
        transition_params: Transition parameters
        extra_log_factors: Additional per-candidate log terms (lane and scenario
            factors); missing entries count as 0
        candidates: Precomputed candidate roads, queried from the graph if None

    Returns:
        The updated state
    """
    if candidates is None:
        candidates = graph.candidates(pose.position, emission.candidate_radius)
    extras = extra_log_factors or {}
    emission_logs = {}
    projections = {}
    for rid, projection in candidates:
        emission_logs[rid] = (
            emission_distance(projection.distance, emission.sigma)
            + emission_heading(heading_diff(pose.heading, projection.road_heading), emission.eps_heading)
            + extras.get(rid, 0.0)
        )
        projections[rid] = projection
    return advance(state, emission_logs,
                   lambda a, b: transition(graph, a, b, transition_params),
                   projections)


def best_road(state: MatcherState) -> int:
    """Most probable road of the last step."""
    if not state.steps or not state.steps[-1]:
        raise EmptyLattice("Last lattice step has no candidates")
    return _argmax(state.steps[-1])


def backtrack(state: MatcherState) -> List[Optional[int]]:
    """
    Maximum-likelihood road sequence. Each restart segment is traced back from
    its own best final road; restart boundaries yield None.
    """
    if not state.steps or all(not step for step in state.steps):
        raise EmptyLattice("Lattice has no candidates in any step")
    sequence: List[Optional[int]] = [None] * len(state.steps)
    current: Optional[int] = None
    for i in range(len(state.steps) - 1, -1, -1):
        step = state.steps[i]
        if not step:
            current = None
            continue
        if current is None:
            current = _argmax(step)
        sequence[i] = current
        current = step[current].backpointer
    return sequence


def step_probabilities(step: Mapping[int, LatticeNode]) -> Dict[int, float]:
    """Normalized probabilities of one lattice step."""
    if not step:
        return {}
    total = float(logsumexp([node.log_joint for node in step.values()]))
    return {rid: math.exp(node.log_joint - total) for rid, node in sorted(step.items())}


class HmmMatcher:
    """Convenience wrapper running the lattice over one trajectory."""

    def __init__(self, graph: RoadGraph, emission: Optional[EmissionParams] = None,
                 transition_params: Optional[TransitionParams] = None, normalize: bool = True):
        self.logger = logging.getLogger(__name__)
        self.graph = graph
        self.emission = emission or EmissionParams()
        self.transition_params = transition_params or TransitionParams()
        self.state = MatcherState(normalize=normalize)

    def step(self, pose: Pose, extra_log_factors: Optional[Mapping[int, float]] = None,
             candidates: Optional[Sequence[Tuple[int, Projection]]] = None) -> Dict[int, LatticeNode]:
        viterbi_step(self.state, pose, self.graph, self.emission, self.transition_params,
                     extra_log_factors, candidates)
        return self.state.steps[-1]


def nearest_road_sequence(graph: RoadGraph, poses: Iterable[Pose],
                          radius: float = DEFAULT_CANDIDATE_RADIUS) -> List[Optional[int]]:
    """Point-to-curve matching: each pose independently takes its closest road."""
    sequence: List[Optional[int]] = []
    for pose in poses:
        candidates = graph.candidates(pose.position, radius)
        if not candidates:
            sequence.append(None)
            continue
        sequence.append(min(candidates, key=lambda c: (c[1].distance, c[0]))[0])
    return sequence
