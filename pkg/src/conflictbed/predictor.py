"""Multi-sample trajectory prediction for traffic agents.

Generation is physics-based: vehicles and cyclists follow map routes at
their current speed, pedestrians keep their heading with a small fan of
perturbations. Samples that cross the ego plan can then be refined to stop
before the cross point when the relation model says the agent is yielding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .conflict import Relation, detect_spatial_conflict
from .geometry import Agent, AgentKind, Trajectory, heading_difference
from .kinematics import stop_rate_for_distance
from .lane_map import LaneGraph, closest_lane_distance, enumerate_routes, route_path
from .paths import PathPolyline, onboard_onto

LANE_ATTACH_RADIUS = 10.0
ROUTE_LENGTH_MARGIN = 15.0
ROUTE_LENGTH_BUCKET = 10.0
MAX_REFINE_DECEL = 1.5
TOP_PICK_LOOKAHEAD_STEPS = 10


class PredictorKind(Enum):
    CONSTANT_VELOCITY = "cv"
    P4P = "p4p"
    P4P_NO_RELATION = "p4p-norelation"
    NO_PREDICT = "nopredict"
    REPLAY = "replay"


@dataclass(frozen=True)
class PredictorConfig:
    samples_k: int = 6
    horizon_seconds: float = 8.0
    observation_seconds: float = 1.1
    step_seconds: float = 0.1
    pedestrian_perturb: float = math.radians(15.0)
    relation_threshold: float = 0.5
    stop_buffer: float = 2.0
    speed_source: str = "last"  # or "window_mean"

    def __post_init__(self) -> None:
        if self.samples_k < 1:
            raise ValueError("samples_k must be at least 1")
        steps = self.horizon_seconds / self.step_seconds
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("horizon must be a whole number of steps")
        if self.speed_source not in ("last", "window_mean"):
            raise ValueError(f"unknown speed source {self.speed_source!r}")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon_seconds / self.step_seconds))


@dataclass(frozen=True)
class PredictionSet:
    """K future trajectory samples for one agent.

    `raw_samples` keeps the pre-refinement candidates when yield refinement
    replaced any sample; conflict identification is scored against the
    candidates, while the planner consumes `samples`.
    """

    agent_id: int
    samples: tuple[Trajectory, ...]
    weights: tuple[float, ...] | None
    top_index: int | None
    raw_samples: tuple[Trajectory, ...] | None = None

    def __post_init__(self) -> None:
        if self.samples:
            n = len(self.samples[0])
            if any(len(s) != n for s in self.samples):
                raise ValueError("prediction samples must share one length")
            if self.top_index is None or not 0 <= self.top_index < len(self.samples):
                raise ValueError("top_index outside sample range")
        if self.weights is not None:
            if len(self.weights) != len(self.samples):
                raise ValueError("one weight per sample required")
            if any(w < 0.0 for w in self.weights):
                raise ValueError("negative sample weight")
            if self.samples and abs(sum(self.weights) - 1.0) > 1e-6:
                raise ValueError("sample weights must sum to 1")
        if self.raw_samples is not None and len(self.raw_samples) != len(self.samples):
            raise ValueError("raw_samples must mirror samples")

    @property
    def candidates(self) -> tuple[Trajectory, ...]:
        """Pre-refinement samples (identification is scored on these)."""
        return self.raw_samples if self.raw_samples is not None else self.samples


def _uniform_weights(k: int) -> tuple[float, ...]:
    return tuple([1.0 / k] * k)


def _last_velocity(agent: Agent, dt: float) -> tuple[float, float]:
    """Velocity vector from the last observed displacement."""
    hist = agent.history
    if len(hist) >= 2:
        return (
            float(hist.xs[-1] - hist.xs[-2]) / dt,
            float(hist.ys[-1] - hist.ys[-2]) / dt,
        )
    state = hist.last_state()
    return state.speed * math.cos(state.heading), state.speed * math.sin(state.heading)


def _agent_speed(agent: Agent, config: PredictorConfig) -> float:
    if config.speed_source == "window_mean":
        return float(np.mean(agent.history.speeds))
    return agent.current_state.speed


def _straight_sample(agent: Agent, heading: float, speed: float, config: PredictorConfig) -> Trajectory:
    state = agent.current_state
    steps = np.arange(1, config.horizon_steps + 1, dtype=float)
    dist = speed * config.step_seconds * steps
    n = config.horizon_steps
    return Trajectory(
        xs=state.position.x + dist * math.cos(heading),
        ys=state.position.y + dist * math.sin(heading),
        headings=np.full(n, heading),
        speeds=np.full(n, speed),
        start_index=state.time_index + 1,
    )


def predict_constant_velocity(agent: Agent, config: PredictorConfig) -> PredictionSet:
    """Linear extrapolation of the last observed displacement, replicated K times."""
    vx, vy = _last_velocity(agent, config.step_seconds)
    speed = math.hypot(vx, vy)
    heading = math.atan2(vy, vx) if speed > 1e-9 else agent.current_state.heading
    sample = _straight_sample(agent, heading, speed, config)
    k = config.samples_k
    return PredictionSet(
        agent_id=agent.id,
        samples=tuple([sample] * k),
        weights=_uniform_weights(k),
        top_index=0,
    )


def predict_pedestrian(agent: Agent, config: PredictorConfig) -> PredictionSet:
    """Straight constant-speed samples fanned around the current heading.

    Offsets span [-perturb, +perturb] evenly, both endpoints included; for
    even K the two middle offsets straddle zero and the smaller-magnitude
    (then smaller-index) offset is the top sample.
    """
    if agent.kind != AgentKind.PEDESTRIAN:
        raise ValueError(f"agent {agent.id} is not a pedestrian")
    state = agent.current_state
    k = config.samples_k
    if k == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.linspace(-config.pedestrian_perturb, config.pedestrian_perturb, k)
    if state.speed <= 1e-9:
        offsets = np.zeros(k)
    samples = tuple(_straight_sample(agent, state.heading + float(off), state.speed, config) for off in offsets)
    return PredictionSet(
        agent_id=agent.id,
        samples=samples,
        weights=_uniform_weights(k),
        top_index=int(np.argmin(np.abs(offsets))),
    )


def _path_following_sample(path: PathPolyline, speed: float, agent: Agent, config: PredictorConfig) -> Trajectory:
    """Constant-speed travel along a path starting at the agent's position.

    Speeds are re-derived from the arc progress so clamping at the path end
    stays kinematically consistent.
    """
    state = agent.current_state
    steps = np.arange(1, config.horizon_steps + 1, dtype=float)
    arcs = np.minimum(speed * config.step_seconds * steps, path.total_length)
    positions = path.positions_at(arcs)
    speeds = np.diff(np.concatenate([[0.0], arcs])) / config.step_seconds
    return Trajectory(
        xs=positions[:, 0],
        ys=positions[:, 1],
        headings=path.headings_at(arcs),
        speeds=speeds,
        start_index=state.time_index + 1,
    )


def _pick_top_sample(samples: tuple[Trajectory, ...], agent: Agent) -> int:
    """Sample whose initial travel direction best matches the current heading."""
    state = agent.current_state
    j = min(TOP_PICK_LOOKAHEAD_STEPS, len(samples[0])) - 1
    best = 0
    best_gap = math.inf
    for i, sample in enumerate(samples):
        dx = float(sample.xs[j]) - state.position.x
        dy = float(sample.ys[j]) - state.position.y
        if math.hypot(dx, dy) < 1e-9:
            gap = 0.0
        else:
            gap = abs(heading_difference(math.atan2(dy, dx), state.heading))
        if gap < best_gap - 1e-12:
            best_gap = gap
            best = i
    return best


def predict_physics_routes(agent: Agent, graph: LaneGraph, config: PredictorConfig) -> PredictionSet:
    """Constant-speed travel along enumerated map routes, one sample each.

    Falls back to constant velocity when no lane is within attach range;
    routes beyond K are dropped, short route sets are padded with the
    constant-velocity sample.
    """
    if agent.kind == AgentKind.PEDESTRIAN:
        raise ValueError(f"agent {agent.id}: route prediction needs a road agent")
    state = agent.current_state
    if not graph.lanes:
        return predict_constant_velocity(agent, config)
    lane_id, dist = closest_lane_distance(graph, state.position)
    if lane_id is None or dist > LANE_ATTACH_RADIUS:
        return predict_constant_velocity(agent, config)

    speed = _agent_speed(agent, config)
    need = speed * config.horizon_seconds + ROUTE_LENGTH_MARGIN
    min_length = math.ceil(need / ROUTE_LENGTH_BUCKET) * ROUTE_LENGTH_BUCKET
    routes = enumerate_routes(graph, lane_id, min_length=min_length)

    k = config.samples_k
    samples: list[Trajectory] = []
    for route in routes[:k]:
        base = route_path(graph, route)
        path = onboard_onto(base, state.position, state.heading)
        samples.append(_path_following_sample(path, speed, agent, config))
    top = _pick_top_sample(tuple(samples), agent)
    if len(samples) < k:
        filler = predict_constant_velocity(agent, config).samples[0]
        samples.extend([filler] * (k - len(samples)))
    return PredictionSet(
        agent_id=agent.id,
        samples=tuple(samples),
        weights=_uniform_weights(k),
        top_index=top,
    )


def refine_yielding_prediction(sample: Trajectory, cross_distance: float, config: PredictorConfig) -> Trajectory:
    """Slow a sample to a stop shy of its cross point, keeping the geometry.

    Deceleration is the minimal constant rate reaching zero speed at
    cross_distance - stop_buffer, capped at 1.5 m/s^2 (past the cap the stop
    happens as early as possible). Crossings beyond the sample's own travel
    are left untouched.
    """
    if cross_distance < 0.0:
        raise ValueError("cross distance must be nonnegative")
    v0 = float(sample.speeds[0])
    if v0 <= 1e-9:
        return sample
    total = float(sample.arc_offsets[-1])
    if cross_distance > total + 1e-9:
        return sample
    target = max(cross_distance - config.stop_buffer, 0.0)
    rate = stop_rate_for_distance(v0, target, config.step_seconds, MAX_REFINE_DECEL)
    n = len(sample)
    steps = np.arange(n, dtype=float)
    speeds = np.maximum(0.0, v0 - rate * steps * config.step_seconds)
    arcs = np.concatenate([[0.0], np.cumsum(speeds[1:] * config.step_seconds)])
    path = PathPolyline(sample.positions)
    positions = path.positions_at(arcs)
    return Trajectory(
        xs=positions[:, 0],
        ys=positions[:, 1],
        headings=path.headings_at(arcs),
        speeds=speeds,
        start_index=sample.start_index,
    )


def predict_p4p(
    agent: Agent,
    ego_plan,
    graph: LaneGraph,
    relation_model,
    config: PredictorConfig,
    use_relation: bool = True,
    scenario_id: str | None = None,
) -> PredictionSet:
    """Physics-based candidates plus per-sample yield refinement.

    Candidates come from route following (road agents) or heading
    perturbation (pedestrians). With use_relation off, conflicting samples
    are kept as-is; otherwise each conflicting sample is kept or refined
    according to the relation model's yield probability.
    """
    if agent.kind == AgentKind.PEDESTRIAN:
        base = predict_pedestrian(agent, config)
    else:
        base = predict_physics_routes(agent, graph, config)
    if not use_relation:
        return base

    from .relation import decide_relation, extract_features

    plan_traj = ego_plan.trajectory
    plan_dims = (ego_plan.ego_length, ego_plan.ego_width)
    refined = list(base.samples)
    changed = False
    for i, sample in enumerate(base.samples):
        conflict = detect_spatial_conflict(plan_traj, plan_dims, sample, agent.dims)
        if conflict is None:
            continue
        features = extract_features(agent, ego_plan, conflict, graph)
        estimate = relation_model.estimate(
            features,
            scenario_id=scenario_id,
            agent_id=agent.id,
            time_index=agent.current_state.time_index,
        )
        if decide_relation(estimate, config.relation_threshold) == Relation.YIELD:
            refined[i] = refine_yielding_prediction(sample, conflict.distance_b, config)
            changed = True
    if not changed:
        return base
    return PredictionSet(
        agent_id=base.agent_id,
        samples=tuple(refined),
        weights=base.weights,
        top_index=base.top_index,
        raw_samples=base.samples,
    )


def predict_replay(agent: Agent, future: Trajectory, config: PredictorConfig) -> PredictionSet:
    """Ground-truth playback: the recorded future, extrapolated past its end."""
    state = agent.current_state
    start = state.time_index + 1
    n = config.horizon_steps
    xs = np.empty(n)
    ys = np.empty(n)
    headings = np.empty(n)
    speeds = np.empty(n)
    for j in range(n):
        t = start + j
        if t <= future.end_index:
            i = t - future.start_index
            xs[j], ys[j] = future.xs[i], future.ys[i]
            headings[j], speeds[j] = future.headings[i], future.speeds[i]
        else:
            over = t - future.end_index
            if len(future) >= 2:
                dx = float(future.xs[-1] - future.xs[-2])
                dy = float(future.ys[-1] - future.ys[-2])
            else:
                dx = dy = 0.0
            xs[j] = future.xs[-1] + over * dx
            ys[j] = future.ys[-1] + over * dy
            headings[j] = future.headings[-1]
            speeds[j] = math.hypot(dx, dy) / config.step_seconds
    k = config.samples_k
    sample = Trajectory(xs=xs, ys=ys, headings=headings, speeds=speeds, start_index=start)
    return PredictionSet(
        agent_id=agent.id,
        samples=tuple([sample] * k),
        weights=_uniform_weights(k),
        top_index=0,
    )


def predict_none(agent: Agent) -> PredictionSet:
    """Worst-case comparator: no samples at all."""
    return PredictionSet(agent_id=agent.id, samples=(), weights=None, top_index=None)
