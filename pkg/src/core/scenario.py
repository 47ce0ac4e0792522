"""Driving-scenario probabilities and the per-road scenario emission factor."""
import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from src.core.road_graph import RoadClass
from src.utils.errors import ConfigError, ParseError

DEFAULT_SCENARIO_FLOOR = 1e-4
DEFAULT_STALE_WINDOW = 2.0
# Tolerance on the raw class probabilities before renormalization
SUM_TOLERANCE = 1e-6
SCENARIO_KEYS = ("ordinary", "express", "tunnel")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioProbs:
    t: float
    p_ordinary: float
    p_express: float
    p_tunnel: float

    def __post_init__(self):
        values = (self.p_ordinary, self.p_express, self.p_tunnel)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 + SUM_TOLERANCE for v in values):
            raise ConfigError(f"Scenario probabilities must be within [0, 1], got {values}")
        if abs(sum(values) - 1.0) > SUM_TOLERANCE:
            raise ConfigError(f"Scenario probabilities must sum to 1, got {sum(values)}")

    @classmethod
    def normalized(cls, t: float, ordinary: float, express: float, tunnel: float) -> "ScenarioProbs":
        """Build from raw classifier scores, rescaled to sum to 1."""
        raw = (ordinary, express, tunnel)
        if not all(math.isfinite(v) and v >= 0.0 for v in raw):
            raise ConfigError(f"Scenario scores must be finite and non-negative, got {raw}")
        total = math.fsum(raw)
        if total <= 0.0:
            raise ConfigError("Scenario scores sum to zero")
        return cls(t, ordinary / total, express / total, tunnel / total)

    @classmethod
    def uniform(cls, t: float = 0.0) -> "ScenarioProbs":
        return cls(t, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    def for_class(self, road_class: RoadClass) -> float:
        if road_class is RoadClass.EXPRESSWAY:
            return self.p_express
        if road_class is RoadClass.TUNNEL:
            return self.p_tunnel
        return self.p_ordinary


def scenario_emission(probs: ScenarioProbs, road_class: RoadClass, floor: float = DEFAULT_SCENARIO_FLOOR) -> float:
    """Log scenario factor of a road of class `road_class`. Elevated roads and ramps are expressways."""
    return math.log(max(probs.for_class(road_class), floor))


class ScenarioStream:
    """Time-indexed scenario records with nearest-timestamp lookup."""

    def __init__(self, records: Iterable[ScenarioProbs], stale_window: float = DEFAULT_STALE_WINDOW):
        self.logger = logging.getLogger(__name__)
        self.stale_window = stale_window
        self.records = list(records)
        times = [r.t for r in self.records]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("Scenario timestamps must be strictly increasing")
        self.frame = pd.DataFrame(
            {
                "ordinary": [r.p_ordinary for r in self.records],
                "express": [r.p_express for r in self.records],
                "tunnel": [r.p_tunnel for r in self.records],
            },
            index=pd.Index(times, name="t", dtype=float),
        )

    def __len__(self) -> int:
        return len(self.records)

    def lookup(self, t: float) -> ScenarioProbs:
        """
        Record closest in time to `t`; ties go to the earlier record.

        Returns:
            The nearest record, or uniform probabilities when the nearest record
            is further than `stale_window` seconds away
        """
        if not self.records:
            return ScenarioProbs.uniform(t)
        times = self.frame.index.to_numpy()
        right = int(np.searchsorted(times, t, side="left"))
        best = None
        for i in (right - 1, right):
            if 0 <= i < len(times) and (best is None or abs(times[i] - t) < abs(times[best] - t)):
                best = i
        if abs(times[best] - t) > self.stale_window:
            self.logger.debug(f"Scenario stream stale at t={t}; using uniform probabilities")
            return ScenarioProbs.uniform(t)
        return self.records[best]


def load_scenario_stream(path: str, stale_window: float = DEFAULT_STALE_WINDOW) -> ScenarioStream:
    """
    Load a scenario JSONL file: one `{"t", "ordinary", "express", "tunnel"}` object per line.

    Args:
        path: File path
        stale_window: Maximum gap (seconds) for a record to be used

    Returns:
        ScenarioStream
    """
    records = []
    previous_t: Optional[float] = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                t = float(obj["t"])
                probs = ScenarioProbs.normalized(t, *(float(obj[key]) for key in SCENARIO_KEYS))
            except (ConfigError, ValueError, KeyError, TypeError) as e:
                raise ParseError(f"Invalid scenario record: {e}", path, line_no)
            if previous_t is not None and t <= previous_t:
                raise ParseError(f"Timestamp {t} is not after {previous_t}", path, line_no)
            previous_t = t
            records.append(probs)
    logger.info(f"Loaded {len(records)} scenario records from {path}")
    return ScenarioStream(records, stale_window)
