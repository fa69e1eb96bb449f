"""Closed-loop rollout: ego planning against rule-based reactive traffic.

Each 0.1 s step predicts futures for every agent, revises the ego plan,
advances the ego one step along it, then advances the agents. Agents follow
randomly assigned routes toward the lane speed limit and yield, by arrival
priority, to crossing traffic detected inside a 3 s constant-speed
lookahead. The rollout terminates on an ego collision or at the horizon.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .conflict import (
    Conflict,
    Relation,
    collision_time_indices,
    detect_spatial_conflict,
    label_relation,
)
from .geometry import Agent, AgentKind, AgentState, Point2, Trajectory, boxes_overlap, footprint
from .kinematics import speed_cap_for_stop, step_speed_toward
from .lane_map import LaneGraph, Route, closest_lane_distance, enumerate_routes, select_route
from .paths import PathPolyline
from .planner import EgoPlan, PlannerConfig, ReferenceTrack, build_reference_track, plan_from_state, revise_plan
from .predictor import (
    PredictionSet,
    PredictorConfig,
    PredictorKind,
    predict_constant_velocity,
    predict_none,
    predict_p4p,
    predict_replay,
)

LANE_ATTACH_RADIUS = 10.0
LOOKAHEAD_STEPS = 30
HISTORY_STATES = 12

# Offsets carving independent rng streams out of the master seed.
ROUTE_STREAM = 1
CONNECTOR_STREAM = 2
TIEBREAK_STREAM = 3


@dataclass(frozen=True)
class SimConfig:
    horizon_steps: int = 80
    step_seconds: float = 0.1
    seed: int = 0
    reactive: bool = True

    def __post_init__(self) -> None:
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be at least 1")


@dataclass(frozen=True)
class TerminationReason:
    kind: str  # "collision" | "horizon"
    agent_id: int | None = None


@dataclass
class ConflictStepRecord:
    """Ground-truth and identification status of one (step, agent) pair."""

    step: int
    agent_id: int
    gt_conflict: bool
    first_overlap_index: int | None = None
    relation_truth: Relation | None = None
    identified_top1: bool = False
    identified_topk: bool = False
    relation_predicted: Relation | None = None


@dataclass
class RolloutResult:
    scenario_id: str
    ego_trajectory: Trajectory
    agent_trajectories: dict[int, Trajectory]
    collisions: list[tuple[int, int]]
    termination: TerminationReason
    per_step_predictions: list[dict[int, PredictionSet]]
    conflict_records: list[ConflictStepRecord]
    ego_dims: tuple[float, float]
    agent_dims: dict[int, tuple[float, float]]


def assign_agent_routes(
    agents: list[Agent], graph: LaneGraph, rng: random.Random
) -> dict[int, Route | None]:
    """Uniform random feasible route per agent; None marks a heading ray.

    Pedestrians and off-map agents travel straight along their heading.
    """
    routes: dict[int, Route | None] = {}
    for agent in sorted(agents, key=lambda a: a.id):
        if agent.kind == AgentKind.PEDESTRIAN or not graph.lanes:
            routes[agent.id] = None
            continue
        lane_id, dist = closest_lane_distance(graph, agent.current_state.position)
        if lane_id is None or dist > LANE_ATTACH_RADIUS:
            routes[agent.id] = None
            continue
        options = enumerate_routes(graph, lane_id)
        routes[agent.id] = options[rng.randrange(len(options))]
    return routes


@dataclass
class _Track:
    """Mutable rollout state of one traffic agent."""

    agent: Agent
    mode: str  # "route" | "replay" (rays are route tracks without lanes)
    track: ReferenceTrack | None
    replay: Trajectory | None
    arc: float
    state: AgentState
    rollout_states: list[AgentState] = field(default_factory=list)
    hist_x: list[float] = field(default_factory=list)
    hist_y: list[float] = field(default_factory=list)
    hist_h: list[float] = field(default_factory=list)
    hist_s: list[float] = field(default_factory=list)

    def roll_history(self, state: AgentState) -> None:
        self.hist_x.append(state.position.x)
        self.hist_y.append(state.position.y)
        self.hist_h.append(state.heading)
        self.hist_s.append(state.speed)
        if len(self.hist_x) > HISTORY_STATES:
            del self.hist_x[0], self.hist_y[0], self.hist_h[0], self.hist_s[0]

    def snapshot_agent(self) -> Agent:
        history = Trajectory(
            xs=np.array(self.hist_x),
            ys=np.array(self.hist_y),
            headings=np.array(self.hist_h),
            speeds=np.array(self.hist_s),
            start_index=self.state.time_index - len(self.hist_x) + 1,
        )
        return Agent(
            id=self.agent.id,
            kind=self.agent.kind,
            length=self.agent.length,
            width=self.agent.width,
            history=history,
        )


def _ray_track(state: AgentState, horizon_steps: int, dt: float) -> ReferenceTrack:
    length = max(state.speed * (horizon_steps + LOOKAHEAD_STEPS) * dt, 10.0) + 50.0
    tip = Point2(
        state.position.x + length * math.cos(state.heading),
        state.position.y + length * math.sin(state.heading),
    )
    path = PathPolyline.from_points([state.position, tip])
    return ReferenceTrack(
        path=path,
        limit_arcs=np.array([0.0]),
        limit_values=np.array([max(state.speed, 0.0)]),
        stop_arc=path.total_length,
        route=None,
    )


def _straight_extrapolation(state: AgentState, n: int, dt: float) -> Trajectory:
    steps = np.arange(1, n + 1, dtype=float)
    dist = state.speed * dt * steps
    return Trajectory(
        xs=state.position.x + dist * math.cos(state.heading),
        ys=state.position.y + dist * math.sin(state.heading),
        headings=np.full(n, state.heading),
        speeds=np.full(n, state.speed),
        start_index=state.time_index + 1,
    )


def _path_lookahead(track: _Track, n: int, dt: float) -> Trajectory:
    state = track.state
    arcs = np.minimum(track.arc + state.speed * dt * np.arange(1, n + 1), track.track.path.total_length)
    positions = track.track.path.positions_at(arcs)
    speeds = np.diff(np.concatenate([[track.arc], arcs])) / dt
    return Trajectory(
        xs=positions[:, 0],
        ys=positions[:, 1],
        headings=track.track.path.headings_at(arcs),
        speeds=speeds,
        start_index=state.time_index + 1,
    )


class _World:
    """Rollout state: ego track plus one track per traffic agent."""

    def __init__(
        self,
        scenario,
        planner_config: PlannerConfig,
        sim_config: SimConfig,
    ) -> None:
        self.scenario = scenario
        self.graph: LaneGraph = scenario.graph
        self.planner_config = planner_config
        self.sim_config = sim_config
        self.dt = sim_config.step_seconds

        route_rng = random.Random(sim_config.seed + ROUTE_STREAM)
        connector_rng = random.Random(sim_config.seed + CONNECTOR_STREAM)
        self.tiebreak_rng = random.Random(sim_config.seed + TIEBREAK_STREAM)
        self._tie_order: dict[tuple[int, int], int] = {}

        ego_agent: Agent = scenario.agents[scenario.ego_id]
        self.ego_agent = ego_agent
        ego_state = ego_agent.current_state
        lane_id, dist = closest_lane_distance(self.graph, ego_state.position)
        if lane_id is None:
            raise ValueError("scenario has no lanes for the ego route")
        routes = enumerate_routes(self.graph, lane_id)
        self.ego_route = select_route(routes, self.graph, scenario.ego_goal, route_rng)
        self.ego_track = build_reference_track(
            self.ego_route, ego_state, self.graph, planner_config, connector_rng
        )
        self.ego_arc = 0.0
        self.ego_state = ego_state

        others = [a for i, a in sorted(scenario.agents.items()) if i != scenario.ego_id]
        assigned = assign_agent_routes(others, self.graph, route_rng)
        futures = scenario.futures or {}
        self.tracks: dict[int, _Track] = {}
        for agent in others:
            state = agent.current_state
            future = futures.get(agent.id)
            if not sim_config.reactive and future is not None:
                track = _Track(agent=agent, mode="replay", track=None, replay=future, arc=0.0, state=state)
            else:
                route = assigned[agent.id]
                if route is None:
                    ref = _ray_track(state, sim_config.horizon_steps, self.dt)
                else:
                    ref = build_reference_track(route, state, self.graph, planner_config, connector_rng)
                track = _Track(agent=agent, mode="route", track=ref, replay=None, arc=0.0, state=state)
            for s in agent.history.states():
                track.roll_history(s)
            track.rollout_states.append(state)
            self.tracks[agent.id] = track

    def reference_plan(self) -> EgoPlan:
        return plan_from_state(
            self.ego_track,
            self.ego_state,
            self.ego_arc,
            self.planner_config,
            self.ego_agent.length,
            self.ego_agent.width,
        )

    def _tie_yields(self, id_a: int, id_b: int) -> int:
        """Stable coin flip deciding who yields on an exact arrival tie."""
        key = (min(id_a, id_b), max(id_a, id_b))
        if key not in self._tie_order:
            self._tie_order[key] = self.tiebreak_rng.choice(key)
        return self._tie_order[key]

    def step_agents(self) -> None:
        dt = self.dt
        cfg = self.planner_config
        pre_states = {i: t.state for i, t in self.tracks.items()}
        ego_pre = self.ego_state

        lookaheads: dict[int, Trajectory] = {}
        extraps: dict[int, Trajectory] = {}
        if self.sim_config.reactive:
            for i, track in self.tracks.items():
                if track.mode == "route":
                    lookaheads[i] = _path_lookahead(track, LOOKAHEAD_STEPS, dt)
                extraps[i] = _straight_extrapolation(pre_states[i], LOOKAHEAD_STEPS, dt)
            extraps[-1] = _straight_extrapolation(ego_pre, LOOKAHEAD_STEPS, dt)

        for i in sorted(self.tracks):
            track = self.tracks[i]
            if track.mode == "replay":
                t_next = track.state.time_index + 1
                if t_next <= track.replay.end_index:
                    nxt = track.replay.state_at(t_next - track.replay.start_index)
                else:
                    last = track.replay.last_state()
                    nxt = AgentState(last.position, last.heading, 0.0, t_next)
                track.state = nxt
                track.roll_history(nxt)
                track.rollout_states.append(nxt)
                continue

            ref = track.track
            v = track.state.speed
            target = step_speed_toward(v, ref.limit_at(track.arc), cfg.accel, cfg.comfort_decel, dt)
            cap = speed_cap_for_stop(max(ref.stop_arc - track.arc, 0.0), cfg.comfort_decel, dt)
            if target > cap:
                target = max(cap, v - cfg.emergency_decel * dt)

            if self.sim_config.reactive and i in lookaheads and v > 0.0:
                brake_rate = self._yield_rate(i, lookaheads[i], extraps)
                if brake_rate is not None:
                    target = min(target, max(v - brake_rate * dt, 0.0))

            v_next = max(target, 0.0)
            new_arc = min(track.arc + v_next * dt, ref.path.total_length)
            if new_arc >= ref.path.total_length - 1e-12:
                v_next = (new_arc - track.arc) / dt
            track.arc = new_arc
            pos = ref.path.point_at(track.arc)
            heading = ref.path.heading_at(track.arc)
            nxt = AgentState(pos, heading, v_next, track.state.time_index + 1)
            track.state = nxt
            track.roll_history(nxt)
            track.rollout_states.append(nxt)

    def _yield_rate(self, agent_id: int, own_look: Trajectory, extraps: dict[int, Trajectory]) -> float | None:
        """Braking rate if this agent must yield to anyone, else None."""
        track = self.tracks[agent_id]
        own_dims = track.agent.dims
        nearest_cross: float | None = None
        for other_id in sorted(extraps):
            if other_id == agent_id:
                continue
            other_dims = (
                (self.ego_agent.length, self.ego_agent.width)
                if other_id == -1
                else self.tracks[other_id].agent.dims
            )
            other = extraps[other_id]
            if collision_time_indices(own_look, own_dims, other, other_dims).size == 0:
                continue
            conflict = detect_spatial_conflict(own_look, own_dims, other, other_dims)
            if conflict is None:
                continue
            own_arrival = own_look.start_index + conflict.index_a
            other_arrival = other.start_index + conflict.index_b
            if own_arrival < other_arrival:
                continue
            if own_arrival == other_arrival:
                if other_id != -1 and self._tie_yields(agent_id, other_id) != agent_id:
                    continue
            d = conflict.distance_a
            if nearest_cross is None or d < nearest_cross:
                nearest_cross = d
        if nearest_cross is None:
            return None
        bumper = max(nearest_cross - 0.5 * track.agent.length, 0.0)
        if bumper < self.planner_config.emergency_distance:
            return self.planner_config.emergency_decel
        return self.planner_config.comfort_decel

    def free_flow_trajectory(self, agent_id: int, n_steps: int) -> Trajectory:
        """Route following with no reactions, from the agent's current state."""
        track = self.tracks[agent_id]
        if track.mode == "replay":
            return track.replay.slice_by_time(track.replay.start_index, track.replay.start_index + n_steps - 1)
        ref = track.track
        cfg = self.planner_config
        dt = self.dt
        v = track.state.speed
        arc = track.arc
        xs = np.empty(n_steps)
        ys = np.empty(n_steps)
        hs = np.empty(n_steps)
        ss = np.empty(n_steps)
        for k in range(n_steps):
            target = step_speed_toward(v, ref.limit_at(arc), cfg.accel, cfg.comfort_decel, dt)
            cap = speed_cap_for_stop(max(ref.stop_arc - arc, 0.0), cfg.comfort_decel, dt)
            if target > cap:
                target = max(cap, v - cfg.emergency_decel * dt)
            v = max(target, 0.0)
            arc = min(arc + v * dt, ref.path.total_length)
            pos = ref.path.point_at(arc)
            xs[k], ys[k] = pos.x, pos.y
            hs[k] = ref.path.heading_at(arc)
            ss[k] = v
        return Trajectory(xs=xs, ys=ys, headings=hs, speeds=ss, start_index=track.state.time_index + 1)


def free_flow_preview(
    scenario,
    planner_config: PlannerConfig | None = None,
    sim_config: SimConfig | None = None,
) -> tuple[EgoPlan, dict[int, Trajectory]]:
    """Reference ego plan plus reaction-free agent rollouts.

    This is the constant-behavior picture of a scenario: the ego follows its
    unrevised plan and every agent follows its assigned route with no
    yielding, which is what scenario generation validates conflicts against.
    """
    planner_config = planner_config or PlannerConfig()
    sim_config = sim_config or SimConfig()
    world = _World(scenario, planner_config, sim_config)
    plan = world.reference_plan()
    futures = {
        i: world.free_flow_trajectory(i, sim_config.horizon_steps) for i in sorted(world.tracks)
    }
    return plan, futures


def _predict_for_agent(
    kind: PredictorKind,
    agent: Agent,
    ego_plan: EgoPlan,
    graph: LaneGraph,
    relation_model,
    config: PredictorConfig,
    scenario_id: str,
    future: Trajectory | None,
) -> PredictionSet:
    if kind == PredictorKind.CONSTANT_VELOCITY:
        return predict_constant_velocity(agent, config)
    if kind == PredictorKind.P4P:
        return predict_p4p(agent, ego_plan, graph, relation_model, config, True, scenario_id)
    if kind == PredictorKind.P4P_NO_RELATION:
        return predict_p4p(agent, ego_plan, graph, relation_model, config, False, scenario_id)
    if kind == PredictorKind.NO_PREDICT:
        return predict_none(agent)
    if kind == PredictorKind.REPLAY:
        if future is None:
            raise ValueError(f"replay predictor needs ground-truth futures (agent {agent.id})")
        return predict_replay(agent, future, config)
    raise ValueError(f"unknown predictor kind {kind}")


def run_closed_loop(
    scenario,
    predictor_kind: PredictorKind,
    relation_model,
    planner_config: PlannerConfig | None = None,
    predictor_config: PredictorConfig | None = None,
    sim_config: SimConfig | None = None,
) -> RolloutResult:
    """Roll a scenario forward under one predictor, logging conflicts.

    Per step: predict futures for every agent, revise the ego plan against
    the predictions, advance the ego one step, advance the agents, then
    terminate on any ego collision.
    """
    planner_config = planner_config or PlannerConfig()
    predictor_config = predictor_config or PredictorConfig()
    sim_config = sim_config or SimConfig()

    world = _World(scenario, planner_config, sim_config)
    futures = scenario.futures or {}
    ego_dims = (world.ego_agent.length, world.ego_agent.width)

    ego_states: list[AgentState] = [world.ego_state]
    plans: list[EgoPlan] = []
    per_step_predictions: list[dict[int, PredictionSet]] = []
    collisions: list[tuple[int, int]] = []
    termination = TerminationReason(kind="horizon")

    for step in range(sim_config.horizon_steps):
        ref_plan = world.reference_plan()
        plans.append(ref_plan)

        agents_now = {i: world.tracks[i].snapshot_agent() for i in sorted(world.tracks)}
        predictions = {
            i: _predict_for_agent(
                predictor_kind,
                agents_now[i],
                ref_plan,
                world.graph,
                relation_model,
                predictor_config,
                scenario.scenario_id,
                futures.get(i),
            )
            for i in agents_now
        }
        per_step_predictions.append(predictions)

        revised, _action = revise_plan(ref_plan, predictions, list(agents_now.values()), planner_config)
        world.ego_state = revised.trajectory.state_at(1)
        world.ego_arc = world.ego_arc + float(revised.speed_profile[1]) * sim_config.step_seconds
        ego_states.append(world.ego_state)

        world.step_agents()

        hit_ids = []
        ego_box = footprint(world.ego_state, *ego_dims)
        for i in sorted(world.tracks):
            track = world.tracks[i]
            if boxes_overlap(ego_box, footprint(track.state, *track.agent.dims)):
                hit_ids.append(i)
        if hit_ids:
            t_now = world.ego_state.time_index
            collisions.extend((t_now, i) for i in hit_ids)
            termination = TerminationReason(kind="collision", agent_id=hit_ids[0])
            break

    ego_trajectory = Trajectory.from_states(ego_states)
    agent_trajectories = {
        i: Trajectory.from_states(t.rollout_states) for i, t in sorted(world.tracks.items())
    }

    records = _build_conflict_records(
        plans, per_step_predictions, agent_trajectories, world, ego_dims
    )

    return RolloutResult(
        scenario_id=scenario.scenario_id,
        ego_trajectory=ego_trajectory,
        agent_trajectories=agent_trajectories,
        collisions=collisions,
        termination=termination,
        per_step_predictions=per_step_predictions,
        conflict_records=records,
        ego_dims=ego_dims,
        agent_dims={i: t.agent.dims for i, t in world.tracks.items()},
    )


def _identification_flags(
    prediction: PredictionSet, plan: EgoPlan, dims: tuple[float, float]
) -> tuple[bool, bool]:
    """(top1, topK) spatial-conflict identification against the plan."""
    candidates = prediction.candidates
    if not candidates:
        return False, False
    plan_traj = plan.trajectory
    top1 = (
        detect_spatial_conflict(plan_traj, plan.dims, candidates[prediction.top_index], dims)
        is not None
    )
    if top1:
        return True, True
    for i, cand in enumerate(candidates):
        if i == prediction.top_index:
            continue
        if detect_spatial_conflict(plan_traj, plan.dims, cand, dims) is not None:
            return False, True
    return False, False


def _predicted_relation(
    prediction: PredictionSet, plan: EgoPlan, dims: tuple[float, float]
) -> Relation:
    """Relation the emitted samples imply: kept conflict = pass, refined = yield."""
    if prediction.raw_samples is None:
        return Relation.PASS
    for sample in prediction.samples:
        if detect_spatial_conflict(plan.trajectory, plan.dims, sample, dims) is not None:
            return Relation.PASS
    return Relation.YIELD


def _build_conflict_records(
    plans: list[EgoPlan],
    per_step_predictions: list[dict[int, PredictionSet]],
    agent_trajectories: dict[int, Trajectory],
    world: _World,
    ego_dims: tuple[float, float],
) -> list[ConflictStepRecord]:
    """Per-step ground-truth conflicts versus predictor identification.

    Ground truth compares each step's reference plan against the agent's
    actual subsequent rollout; identification is scored on the (raw)
    prediction candidates archived at the same step.
    """
    records: list[ConflictStepRecord] = []
    for step, plan in enumerate(plans):
        plan_traj = plan.trajectory
        for agent_id in sorted(agent_trajectories):
            traj = agent_trajectories[agent_id]
            dims = world.tracks[agent_id].agent.dims
            first_future = plan_traj.start_index + 1
            gt_conflict: Conflict | None = None
            if traj.end_index >= first_future:
                future = traj.slice_by_time(first_future, traj.end_index)
                gt_conflict = detect_spatial_conflict(plan_traj, ego_dims, future, dims)
            prediction = per_step_predictions[step][agent_id]
            top1, topk = _identification_flags(prediction, plan, dims)
            record = ConflictStepRecord(
                step=step,
                agent_id=agent_id,
                gt_conflict=gt_conflict is not None,
                identified_top1=top1,
                identified_topk=topk,
            )
            if gt_conflict is not None:
                record.first_overlap_index = min(
                    plan_traj.start_index + gt_conflict.index_a,
                    future.start_index + gt_conflict.index_b,
                )
                record.relation_truth = label_relation(gt_conflict, plan_traj, future)
            if topk:
                record.relation_predicted = _predicted_relation(prediction, plan, dims)
            records.append(record)
    return records
