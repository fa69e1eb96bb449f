"""Yield/pass relation estimation for conflicting agents.

The pluggable model interface admits a trained classifier replayed from a
lookup table; the built-in default is a feature-based logistic heuristic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

from .conflict import Conflict, Relation
from .geometry import Agent, AgentKind, Point2
from .lane_map import LaneGraph, closest_lane_distance

TIME_TO_CROSS_CAP = 8.0
MIN_SPEED_FOR_TIME = 0.1
DECEL_TREND_THRESHOLD = 0.05
SIGNAL_LANE_RADIUS = 5.0


@dataclass(frozen=True)
class RelationFeatures:
    agent_speed: float
    ego_speed: float
    agent_cross_distance: float
    ego_cross_distance: float
    agent_time_to_cross: float
    ego_time_to_cross: float
    agent_kind: AgentKind
    agent_decelerating: bool
    signal_state: bool


@dataclass(frozen=True)
class RelationEstimate:
    p_yield: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_yield <= 1.0:
            raise ValueError(f"p_yield {self.p_yield} outside [0, 1]")


@runtime_checkable
class RelationModel(Protocol):
    def estimate(
        self,
        features: RelationFeatures,
        *,
        scenario_id: str | None = None,
        agent_id: int | None = None,
        time_index: int | None = None,
    ) -> RelationEstimate: ...


def _time_to_cross(distance: float, speed: float) -> float:
    return min(distance / max(speed, MIN_SPEED_FOR_TIME), TIME_TO_CROSS_CAP)


def extract_features(agent: Agent, ego_plan, conflict: Conflict, graph: LaneGraph | None = None) -> RelationFeatures:
    """Features of one agent-vs-ego-plan conflict.

    Times to the cross point assume current speeds and are capped at the
    8 s horizon (a stopped agent reads as the cap).
    """
    state = agent.current_state
    speeds = agent.history.speeds
    decelerating = bool(speeds[-1] - speeds[0] < -DECEL_TREND_THRESHOLD)
    signal = False
    if graph is not None and graph.lanes:
        lane_id, dist = closest_lane_distance(graph, state.position)
        signal = lane_id is not None and dist <= SIGNAL_LANE_RADIUS and graph.lanes[lane_id].signal_red
    ego_speed = float(ego_plan.trajectory.speeds[0])
    return RelationFeatures(
        agent_speed=state.speed,
        ego_speed=ego_speed,
        agent_cross_distance=conflict.distance_b,
        ego_cross_distance=conflict.distance_a,
        agent_time_to_cross=_time_to_cross(conflict.distance_b, state.speed),
        ego_time_to_cross=_time_to_cross(conflict.distance_a, ego_speed),
        agent_kind=agent.kind,
        agent_decelerating=decelerating,
        signal_state=signal,
    )


def _logistic(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class HeuristicRelationModel:
    """Logistic combination of arrival-gap, deceleration and signal cues."""

    time_gap_weight: float = 1.0
    decelerating_weight: float = 2.0
    signal_weight: float = 4.0

    def estimate(
        self,
        features: RelationFeatures,
        *,
        scenario_id: str | None = None,
        agent_id: int | None = None,
        time_index: int | None = None,
    ) -> RelationEstimate:
        z = (
            self.time_gap_weight * (features.agent_time_to_cross - features.ego_time_to_cross)
            + self.decelerating_weight * float(features.agent_decelerating)
            + self.signal_weight * float(features.signal_state)
        )
        return RelationEstimate(p_yield=_logistic(z))


def heuristic_estimate(features: RelationFeatures) -> RelationEstimate:
    return HeuristicRelationModel().estimate(features)


class TableRelationModel:
    """Relation probabilities replayed from an offline lookup file.

    File format: one record per line, whitespace separated:

        <scenario_id> <agent_id> <time_index> <p_yield>

    Lines starting with '#' are comments. Lookups missing from the table
    fall back to the given model (heuristic by default).
    """

    def __init__(
        self,
        table: dict[tuple[str, int, int], float],
        fallback: RelationModel | None = None,
    ) -> None:
        self._table = dict(table)
        self._fallback = fallback if fallback is not None else HeuristicRelationModel()

    @classmethod
    def from_file(cls, path: str | Path, fallback: RelationModel | None = None) -> "TableRelationModel":
        return cls.from_text(Path(path).read_text(), fallback=fallback)

    @classmethod
    def from_text(cls, text: str, fallback: RelationModel | None = None) -> "TableRelationModel":
        table: dict[tuple[str, int, int], float] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"relation table line {lineno}: expected 4 fields, got {len(parts)}")
            scenario_id, agent_id, time_index, p = parts
            table[(scenario_id, int(agent_id), int(time_index))] = float(p)
        for key, p in table.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"relation table entry {key}: p_yield {p} outside [0, 1]")
        return cls(table, fallback=fallback)

    def estimate(
        self,
        features: RelationFeatures,
        *,
        scenario_id: str | None = None,
        agent_id: int | None = None,
        time_index: int | None = None,
    ) -> RelationEstimate:
        if scenario_id is not None and agent_id is not None and time_index is not None:
            p = self._table.get((scenario_id, agent_id, time_index))
            if p is not None:
                return RelationEstimate(p_yield=p)
        return self._fallback.estimate(
            features, scenario_id=scenario_id, agent_id=agent_id, time_index=time_index
        )


def decide_relation(estimate: RelationEstimate, threshold: float) -> Relation:
    """Yield iff p_yield >= threshold (the boundary is conservative)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return Relation.YIELD if estimate.p_yield >= threshold else Relation.PASS
