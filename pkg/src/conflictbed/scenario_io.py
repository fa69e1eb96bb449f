"""Scenario and results files, plus parametric synthetic scenario generation.

Both file kinds are canonical JSON: sorted keys, floats fixed to six decimal
places, so identical content always serializes to identical bytes.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .conflict import ConflictClass, classify_conflict, detect_spatial_conflict
from .geometry import DEFAULT_DIMENSIONS, Agent, AgentKind, AgentState, Point2, Trajectory
from .lane_map import Lane, LaneGraph
from .metrics import MetricsReport, ScenarioOutcome, ConflictEvent
from .conflict import Relation

SCHEMA_VERSION = 1
HISTORY_STATES = 12
FLOAT_DECIMALS = 6


class ScenarioFormatError(ValueError):
    """A scenario document violates the schema; the message names the field."""


class GenerationError(ValueError):
    """A parameter combination failed to produce an interactive scenario."""


def _round_floats(value):
    if isinstance(value, float):
        rounded = round(value, FLOAT_DECIMALS)
        return 0.0 if rounded == 0.0 else rounded  # avoid -0.0
    if isinstance(value, dict):
        return {k: _round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v) for v in value]
    return value


def canonical_json(payload: dict) -> str:
    return json.dumps(_round_floats(payload), sort_keys=True, indent=2) + "\n"


@dataclass
class Scenario:
    """One test-bed scenario: map, agents with history, ego and optional futures."""

    scenario_id: str
    graph: LaneGraph
    agents: dict[int, Agent]
    ego_id: int
    ego_goal: Point2 | None = None
    futures: dict[int, Trajectory] | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return scenario_to_dict(self) == scenario_to_dict(other)


def _state_row(state: AgentState) -> list[float]:
    return [state.position.x, state.position.y, state.heading, state.speed]


def scenario_to_dict(scenario: Scenario) -> dict:
    lanes = [
        {
            "id": lane.id,
            "centerline": [[p.x, p.y] for p in lane.centerline],
            "speed_limit": lane.speed_limit,
            "successors": list(lane.successors),
            "signal_red": lane.signal_red,
        }
        for _, lane in sorted(scenario.graph.lanes.items())
    ]
    agents = [
        {
            "id": agent.id,
            "kind": agent.kind.value,
            "length": agent.length,
            "width": agent.width,
            "history": [_state_row(s) for s in agent.history.states()],
        }
        for _, agent in sorted(scenario.agents.items())
    ]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": scenario.scenario_id,
        "lanes": lanes,
        "agents": agents,
        "ego_agent_id": scenario.ego_id,
        "ego_goal": [scenario.ego_goal.x, scenario.ego_goal.y] if scenario.ego_goal else None,
        "ground_truth_futures": (
            {
                str(agent_id): [_state_row(s) for s in traj.states()]
                for agent_id, traj in sorted(scenario.futures.items())
            }
            if scenario.futures
            else None
        ),
    }
    return doc


def _fail(path: str, message: str):
    raise ScenarioFormatError(f"{path}: {message}")


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        _fail(f"{path}.{key}", "missing field")
    return doc[key]


def _parse_states(rows, path: str, start_index: int) -> list[AgentState]:
    states = []
    for j, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) != 4:
            _fail(f"{path}[{j}]", "state must be [x, y, heading, speed]")
        x, y, heading, speed = (float(v) for v in row)
        if speed < 0.0:
            _fail(f"{path}[{j}]", f"negative speed {speed}")
        states.append(AgentState(Point2(x, y), heading, speed, start_index + j))
    return states


def parse_scenario(doc: dict) -> Scenario:
    """Validate a scenario document and build the in-memory scenario."""
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario: expected a JSON object")
    version = _require(doc, "schema_version", "scenario")
    if version != SCHEMA_VERSION:
        _fail("scenario.schema_version", f"unknown version {version}")
    scenario_id = _require(doc, "scenario_id", "scenario")
    if not isinstance(scenario_id, str) or not scenario_id:
        _fail("scenario.scenario_id", "must be a non-empty string")

    lanes: dict[int, Lane] = {}
    for i, lane_doc in enumerate(_require(doc, "lanes", "scenario")):
        path = f"scenario.lanes[{i}]"
        lane_id = int(_require(lane_doc, "id", path))
        if lane_id in lanes:
            _fail(path, f"duplicate lane id {lane_id}")
        centerline_rows = _require(lane_doc, "centerline", path)
        if len(centerline_rows) < 2:
            _fail(f"{path}.centerline", "needs at least 2 points")
        try:
            lane = Lane(
                id=lane_id,
                centerline=tuple(Point2(float(p[0]), float(p[1])) for p in centerline_rows),
                speed_limit=float(_require(lane_doc, "speed_limit", path)),
                successors=tuple(int(s) for s in lane_doc.get("successors", [])),
                signal_red=bool(lane_doc.get("signal_red", False)),
            )
        except ValueError as exc:
            _fail(path, str(exc))
        lanes[lane_id] = lane
    try:
        graph = LaneGraph(lanes)
    except ValueError as exc:
        _fail("scenario.lanes", str(exc))

    agents: dict[int, Agent] = {}
    for i, agent_doc in enumerate(_require(doc, "agents", "scenario")):
        path = f"scenario.agents[{i}]"
        agent_id = int(_require(agent_doc, "id", path))
        if agent_id < 0:
            _fail(f"{path}.id", "agent ids must be nonnegative")
        if agent_id in agents:
            _fail(path, f"duplicate agent id {agent_id}")
        kind_raw = _require(agent_doc, "kind", path)
        try:
            kind = AgentKind(kind_raw)
        except ValueError:
            _fail(f"{path}.kind", f"unknown kind {kind_raw!r}")
        default_len, default_wid = DEFAULT_DIMENSIONS[kind]
        rows = _require(agent_doc, "history", path)
        if len(rows) != HISTORY_STATES:
            _fail(f"{path}.history", f"expected {HISTORY_STATES} states, got {len(rows)}")
        states = _parse_states(rows, f"{path}.history", start_index=1 - HISTORY_STATES)
        try:
            agent = Agent(
                id=agent_id,
                kind=kind,
                length=float(agent_doc.get("length", default_len)),
                width=float(agent_doc.get("width", default_wid)),
                history=Trajectory.from_states(states),
            )
        except ValueError as exc:
            _fail(path, str(exc))
        agents[agent_id] = agent

    ego_id = int(_require(doc, "ego_agent_id", "scenario"))
    if ego_id not in agents:
        _fail("scenario.ego_agent_id", f"agent {ego_id} not present")

    goal_doc = doc.get("ego_goal")
    goal = Point2(float(goal_doc[0]), float(goal_doc[1])) if goal_doc else None

    futures = None
    futures_doc = doc.get("ground_truth_futures")
    if futures_doc:
        futures = {}
        for key, rows in futures_doc.items():
            path = f"scenario.ground_truth_futures[{key}]"
            agent_id = int(key)
            if agent_id not in agents:
                _fail(path, "future for unknown agent")
            if not rows:
                _fail(path, "empty future")
            states = _parse_states(rows, path, start_index=1)
            try:
                # Stitching onto the history end validates kinematic continuity.
                Trajectory.from_states([agents[agent_id].history.last_state()] + states)
            except ValueError as exc:
                _fail(path, str(exc))
            futures[agent_id] = Trajectory.from_states(states)

    return Scenario(
        scenario_id=scenario_id,
        graph=graph,
        agents=agents,
        ego_id=ego_id,
        ego_goal=goal,
        futures=futures,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(doc)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(canonical_json(scenario_to_dict(scenario)))


# --- results files -----------------------------------------------------------


def outcome_to_dict(outcome: ScenarioOutcome) -> dict:
    return {
        "scenario_id": outcome.scenario_id,
        "collision": outcome.collision,
        "progress_meters": outcome.progress_meters,
        "stuck": outcome.stuck,
        "conflict_events": [
            {
                "agent_id": e.agent_id,
                "identified_top1": e.identified_top1,
                "identified_topk": e.identified_topk,
                "relation_truth": e.relation_truth.value,
                "relation_predicted": e.relation_predicted.value if e.relation_predicted else None,
            }
            for e in outcome.conflict_events
        ],
        "prediction_errors": [[ade, fde] for ade, fde in outcome.prediction_errors],
        "step_conflicts": outcome.step_conflicts,
        "step_identified_top1": outcome.step_identified_top1,
        "step_identified_topk": outcome.step_identified_topk,
    }


def outcome_from_dict(doc: dict) -> ScenarioOutcome:
    return ScenarioOutcome(
        scenario_id=doc["scenario_id"],
        collision=doc["collision"],
        progress_meters=doc["progress_meters"],
        stuck=doc["stuck"],
        conflict_events=[
            ConflictEvent(
                agent_id=e["agent_id"],
                identified_top1=e["identified_top1"],
                identified_topk=e["identified_topk"],
                relation_truth=Relation(e["relation_truth"]),
                relation_predicted=Relation(e["relation_predicted"]) if e["relation_predicted"] else None,
            )
            for e in doc["conflict_events"]
        ],
        prediction_errors=[(p[0], p[1]) for p in doc["prediction_errors"]],
        step_conflicts=doc["step_conflicts"],
        step_identified_top1=doc["step_identified_top1"],
        step_identified_topk=doc["step_identified_topk"],
    )


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "scenario_count": report.scenario_count,
        "conflict_count": report.conflict_count,
        "conflict_recall_top1": report.conflict_recall_top1,
        "conflict_recall_topk": report.conflict_recall_topk,
        "relation_accuracy": report.relation_accuracy,
        "collision_rate": report.collision_rate,
        "progress_mean": report.progress_mean,
        "stuck_rate": report.stuck_rate,
        "min_ade_mean": report.min_ade_mean,
        "min_fde_mean": report.min_fde_mean,
        "step_recall_top1": report.step_recall_top1,
        "step_recall_topk": report.step_recall_topk,
    }


def results_to_dict(config: dict, outcomes: list[ScenarioOutcome], report: MetricsReport) -> dict:
    if not outcomes:
        raise ValueError("results need at least one scenario outcome")
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "outcomes": [outcome_to_dict(o) for o in sorted(outcomes, key=lambda o: o.scenario_id)],
        "report": report_to_dict(report),
    }


def save_results(results: dict, path: str | Path) -> None:
    if not results.get("outcomes"):
        raise ValueError("results need at least one scenario outcome")
    Path(path).write_text(canonical_json(results))


def load_results(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# --- synthetic scenario generation -------------------------------------------


class SyntheticTemplate(Enum):
    UNPROTECTED_LEFT_TURN = "unprotected_left_turn"
    PEDESTRIAN_CROSSING = "pedestrian_crossing"
    TWO_WAY_MERGE = "two_way_merge"
    FOUR_WAY_CROSS = "four_way_cross"


@dataclass(frozen=True)
class SyntheticParams:
    seed: int = 0
    ego_speed: float | None = None
    agent_speed: float | None = None
    ego_gap: float | None = None
    agent_gap: float | None = None
    jitter: bool = True
    include_futures: bool = False


HALF = 1.75  # lane offset from the road center
LIMIT = 8.0
DT = 0.1


def _jittered(rng: random.Random, base: float, spread: float, override: float | None, jitter: bool) -> float:
    if override is not None:
        return override
    if not jitter:
        return base
    return base + rng.uniform(-spread, spread)


def _straight_lane(lane_id: int, a: tuple[float, float], b: tuple[float, float], successors=(), limit=LIMIT) -> Lane:
    return Lane(
        id=lane_id,
        centerline=(Point2(*a), Point2(*b)),
        speed_limit=limit,
        successors=tuple(successors),
    )


def _history_states(x: float, y: float, heading: float, speed: float) -> list[AgentState]:
    """Constant-speed straight history ending at the given pose at index 0."""
    states = []
    for j in range(HISTORY_STATES):
        back = (HISTORY_STATES - 1 - j) * speed * DT
        states.append(
            AgentState(
                Point2(round(x - back * math.cos(heading), FLOAT_DECIMALS), round(y - back * math.sin(heading), FLOAT_DECIMALS)),
                heading,
                speed,
                j - (HISTORY_STATES - 1),
            )
        )
    return states


def _history_along_path(path, end_arc: float, speed: float) -> list[AgentState]:
    """Constant-speed history walked backwards along a path polyline."""
    states = []
    for j in range(HISTORY_STATES):
        arc = max(end_arc - (HISTORY_STATES - 1 - j) * speed * DT, 0.0)
        pos = path.point_at(arc)
        states.append(
            AgentState(
                Point2(round(pos.x, FLOAT_DECIMALS), round(pos.y, FLOAT_DECIMALS)),
                round(path.heading_at(arc), FLOAT_DECIMALS),
                speed,
                j - (HISTORY_STATES - 1),
            )
        )
    return states


def _vehicle(agent_id: int, states: list[AgentState]) -> Agent:
    length, width = DEFAULT_DIMENSIONS[AgentKind.VEHICLE]
    return Agent(agent_id, AgentKind.VEHICLE, length, width, Trajectory.from_states(states))


def _pedestrian(agent_id: int, states: list[AgentState]) -> Agent:
    length, width = DEFAULT_DIMENSIONS[AgentKind.PEDESTRIAN]
    return Agent(agent_id, AgentKind.PEDESTRIAN, length, width, Trajectory.from_states(states))


def _build_unprotected_left_turn(params: SyntheticParams, rng: random.Random):
    ego_speed = round(_jittered(rng, 6.0, 1.0, params.ego_speed, params.jitter), FLOAT_DECIMALS)
    agent_speed = round(_jittered(rng, 5.0, 0.8, params.agent_speed, params.jitter), FLOAT_DECIMALS)
    ego_gap = _jittered(rng, 18.0, 4.0, params.ego_gap, params.jitter)
    agent_gap = _jittered(rng, 12.0, 6.0, params.agent_gap, params.jitter)

    lanes = [
        _straight_lane(1, (HALF, -70.0), (HALF, -10.0), successors=(2, 3)),
        _straight_lane(2, (HALF, 10.0), (HALF, 70.0)),
        _straight_lane(3, (-10.0, HALF), (-70.0, HALF)),
        _straight_lane(4, (-HALF, 70.0), (-HALF, 10.0), successors=(5,)),
        _straight_lane(5, (-HALF, -10.0), (-HALF, -70.0)),
    ]
    ego = _vehicle(1, _history_states(HALF, -10.0 - ego_gap, math.pi / 2, ego_speed))
    agent = _vehicle(2, _history_states(-HALF, 10.0 + agent_gap, -math.pi / 2, agent_speed))
    return lanes, {1: ego, 2: agent}, 1, Point2(-40.0, HALF)


def _build_pedestrian_crossing(params: SyntheticParams, rng: random.Random):
    ego_speed = round(_jittered(rng, 6.0, 1.0, params.ego_speed, params.jitter), FLOAT_DECIMALS)
    ped_speed = round(_jittered(rng, 1.4, 0.2, params.agent_speed, params.jitter), FLOAT_DECIMALS)
    ego_gap = _jittered(rng, 25.0, 6.0, params.ego_gap, params.jitter)
    ped_x = round(_jittered(rng, 12.0, 4.0, params.agent_gap, params.jitter), FLOAT_DECIMALS)

    lanes = [_straight_lane(1, (-70.0, -HALF), (90.0, -HALF))]
    ego = _vehicle(1, _history_states(-ego_gap, -HALF, 0.0, ego_speed))
    ped = _pedestrian(2, _history_states(ped_x, -10.0, math.pi / 2, ped_speed))
    return lanes, {1: ego, 2: ped}, 1, Point2(60.0, -HALF)


def _build_two_way_merge(params: SyntheticParams, rng: random.Random):
    from .paths import PathPolyline

    ego_speed = round(_jittered(rng, 7.0, 0.8, params.ego_speed, params.jitter), FLOAT_DECIMALS)
    agent_speed = round(_jittered(rng, 5.0, 0.6, params.agent_speed, params.jitter), FLOAT_DECIMALS)
    ego_gap = _jittered(rng, 28.0, 4.0, params.ego_gap, params.jitter)
    agent_gap = _jittered(rng, 30.0, 4.0, params.agent_gap, params.jitter)

    ramp_points = ((-40.0, -30.0), (-25.0, -19.0), (-12.0, -9.0), (-3.0, -2.2), (10.0, 0.0))
    lanes = [
        _straight_lane(1, (-80.0, 0.0), (10.0, 0.0), successors=(2,)),
        _straight_lane(2, (10.0, 0.0), (110.0, 0.0)),
        Lane(id=3, centerline=tuple(Point2(*p) for p in ramp_points), speed_limit=LIMIT, successors=(2,)),
    ]
    ramp_path = PathPolyline.from_points([Point2(*p) for p in ramp_points])
    agent_arc = max(ramp_path.total_length - agent_gap, 11 * agent_speed * DT)
    ego = _vehicle(1, _history_states(-ego_gap, 0.0, 0.0, ego_speed))
    agent = _vehicle(2, _history_along_path(ramp_path, agent_arc, agent_speed))
    return lanes, {1: ego, 2: agent}, 1, Point2(80.0, 0.0)


def _build_four_way_cross(params: SyntheticParams, rng: random.Random):
    ego_speed = round(_jittered(rng, 6.0, 0.8, params.ego_speed, params.jitter), FLOAT_DECIMALS)
    agent_speed = round(_jittered(rng, 5.0, 0.6, params.agent_speed, params.jitter), FLOAT_DECIMALS)
    ego_gap = _jittered(rng, 10.0, 3.0, params.ego_gap, params.jitter)
    agent_gap = _jittered(rng, 16.0, 4.0, params.agent_gap, params.jitter)

    lanes = [
        _straight_lane(1, (HALF, -70.0), (HALF, -10.0), successors=(2,)),
        _straight_lane(2, (HALF, 10.0), (HALF, 70.0)),
        _straight_lane(3, (-HALF, 70.0), (-HALF, 10.0), successors=(4,)),
        _straight_lane(4, (10.0, -HALF), (70.0, -HALF)),
    ]
    ego = _vehicle(1, _history_states(HALF, -10.0 - ego_gap, math.pi / 2, ego_speed))
    agent = _vehicle(2, _history_states(-HALF, 10.0 + agent_gap, -math.pi / 2, agent_speed))
    return lanes, {1: ego, 2: agent}, 1, Point2(HALF, 50.0)


_BUILDERS = {
    SyntheticTemplate.UNPROTECTED_LEFT_TURN: _build_unprotected_left_turn,
    SyntheticTemplate.PEDESTRIAN_CROSSING: _build_pedestrian_crossing,
    SyntheticTemplate.TWO_WAY_MERGE: _build_two_way_merge,
    SyntheticTemplate.FOUR_WAY_CROSS: _build_four_way_cross,
}


def generate_synthetic(template: SyntheticTemplate | str, params: SyntheticParams | None = None) -> Scenario:
    """Build a seeded scenario whose constant-behavior rollout provably
    contains a non-trivial conflict between the ego plan and an agent.

    Raises GenerationError when the parameter combination produces no such
    conflict.
    """
    from .planner import PlannerConfig
    from .simulator import SimConfig, free_flow_preview

    if isinstance(template, str):
        template = SyntheticTemplate(template)
    params = params or SyntheticParams()
    rng = random.Random(params.seed)
    lanes, agents, ego_id, goal = _BUILDERS[template](params, rng)

    scenario = Scenario(
        scenario_id=f"{template.value}-{params.seed:05d}",
        graph=LaneGraph({lane.id: lane for lane in lanes}),
        agents=agents,
        ego_id=ego_id,
        ego_goal=goal,
    )

    plan, futures = free_flow_preview(
        scenario, PlannerConfig(), SimConfig(seed=params.seed, reactive=True)
    )
    ego_dims = (agents[ego_id].length, agents[ego_id].width)
    non_trivial = False
    for agent_id, future in futures.items():
        dims = agents[agent_id].dims
        conflict = detect_spatial_conflict(plan.trajectory, ego_dims, future, dims)
        if conflict is None:
            continue
        kind = classify_conflict(conflict, plan.trajectory, ego_dims, future, dims, scenario.graph)
        if kind == ConflictClass.NON_TRIVIAL:
            non_trivial = True
            break
    if not non_trivial:
        raise GenerationError(
            f"{scenario.scenario_id}: parameters produce no non-trivial conflict"
        )

    if params.include_futures:
        scenario.futures = {
            agent_id: _rounded_trajectory(future) for agent_id, future in sorted(futures.items())
        }
    # Round-trip through the document form so equality with a reloaded file holds.
    return parse_scenario(json.loads(canonical_json(scenario_to_dict(scenario))))


def _rounded_trajectory(traj: Trajectory) -> Trajectory:
    return Trajectory(
        xs=np.round(traj.xs, FLOAT_DECIMALS),
        ys=np.round(traj.ys, FLOAT_DECIMALS),
        headings=np.round(traj.headings, FLOAT_DECIMALS),
        speeds=np.round(traj.speeds, FLOAT_DECIMALS),
        start_index=traj.start_index,
    )
