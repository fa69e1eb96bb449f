"""Route-based ego planning: reference trajectory plus speed-profile revision.

The reference plan follows the route geometry at the lane speed limit,
ramping at 0.3 m/s^2 up or 0.75 m/s^2 down and stopping at the route end.
When predictions indicate a collision, the profile is replaced by immediate
braking before the earliest cross point: 0.75 m/s^2 normally, 1.5 m/s^2
when the cross point is under 2 m away.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .conflict import earliest_cross_distance
from .geometry import Agent, AgentState, Trajectory
from .kinematics import braking_distance, braking_speeds, speed_cap_for_stop, step_speed_toward
from .lane_map import LaneGraph, Route, route_path_with_limits
from .paths import MIN_ONBOARD_LOOKAHEAD, PathPolyline, connector_points, join_pieces


class PlanAction(Enum):
    PROCEED = "proceed"
    SLOW_DOWN = "slow_down"


@dataclass(frozen=True)
class PlannerConfig:
    accel: float = 0.3
    comfort_decel: float = 0.75
    emergency_decel: float = 1.5
    emergency_distance: float = 2.0
    horizon_seconds: float = 8.0
    stop_buffer: float = 2.0
    step_seconds: float = 0.1

    def __post_init__(self) -> None:
        for name in ("accel", "comfort_decel", "emergency_decel", "emergency_distance", "horizon_seconds", "stop_buffer"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.emergency_decel <= self.comfort_decel:
            raise ValueError("emergency deceleration must exceed comfort deceleration")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon_seconds / self.step_seconds))


@dataclass(frozen=True, eq=False)
class EgoPlan:
    """Planned path with a per-step speed profile and derived trajectory."""

    path: PathPolyline
    start_arc: float
    speed_profile: np.ndarray
    trajectory: Trajectory
    ego_length: float
    ego_width: float

    @property
    def dims(self) -> tuple[float, float]:
        return (self.ego_length, self.ego_width)


@dataclass(frozen=True, eq=False)
class ReferenceTrack:
    """Persistent route geometry the per-step plans are built on."""

    path: PathPolyline
    limit_arcs: np.ndarray
    limit_values: np.ndarray
    stop_arc: float
    route: Route | None = None

    def limit_at(self, arc: float) -> float:
        i = int(np.searchsorted(self.limit_arcs, arc, side="right")) - 1
        return float(self.limit_values[max(i, 0)])


def build_reference_track(
    route: Route,
    start: AgentState,
    graph: LaneGraph,
    config: PlannerConfig,
    connector_rng: random.Random | None = None,
) -> ReferenceTrack:
    """Route geometry blended onto the ego's current pose.

    The onboarding connector and the inter-lane connectors are cubic Bezier
    curves; junction points are randomized inside the adjoining quarter
    windows when a rng is given.
    """
    base, marks = route_path_with_limits(graph, route, connector_rng)
    dist, arc = base.project(start.position.x, start.position.y)
    target_arc = min(arc + max(2.0 * dist, MIN_ONBOARD_LOOKAHEAD), base.total_length)
    blend = connector_points(
        start.position, start.heading, base.point_at(target_arc), base.heading_at(target_arc)
    )
    blend_arr = np.array([[p.x, p.y] for p in blend])
    blend_len = float(np.sum(np.hypot(*np.diff(blend_arr, axis=0).T))) if blend_arr.shape[0] > 1 else 0.0
    path = join_pieces([blend_arr, base.tail_from(target_arc)])

    base_arcs = np.array([a for a, _ in marks])
    base_limits = np.array([v for _, v in marks])
    entry_limit = base_limits[max(int(np.searchsorted(base_arcs, target_arc, side="right")) - 1, 0)]
    keep = base_arcs > target_arc
    limit_arcs = np.concatenate([[0.0], base_arcs[keep] - target_arc + blend_len])
    limit_values = np.concatenate([[entry_limit], base_limits[keep]])

    stop_arc = path.total_length
    overrun = braking_distance(start.speed, config.emergency_decel, config.step_seconds) - stop_arc
    if overrun > 0.0:
        path = path.extended(overrun + 2.0)
    return ReferenceTrack(
        path=path,
        limit_arcs=limit_arcs,
        limit_values=limit_values,
        stop_arc=stop_arc,
        route=route,
    )


def plan_from_state(
    track: ReferenceTrack,
    state: AgentState,
    arc: float,
    config: PlannerConfig,
    ego_length: float,
    ego_width: float,
) -> EgoPlan:
    """Speed profile from the current state along the remaining track.

    Speeds ramp toward the active lane limit and anticipate a stop at the
    route end; the emergency rate is used only when the entry speed already
    exceeds what the remaining distance allows.
    """
    dt = config.step_seconds
    n = config.horizon_steps
    speeds = np.empty(n + 1)
    arcs = np.empty(n + 1)
    v = state.speed
    s = arc
    speeds[0] = v
    arcs[0] = s
    for k in range(1, n + 1):
        target = step_speed_toward(v, track.limit_at(s), config.accel, config.comfort_decel, dt)
        cap = speed_cap_for_stop(max(track.stop_arc - s, 0.0), config.comfort_decel, dt)
        if target > cap:
            target = max(cap, v - config.emergency_decel * dt)
        v = max(target, 0.0)
        s += v * dt
        speeds[k] = v
        arcs[k] = s
    return _plan_from_profile(track.path, arcs, speeds, state.time_index, ego_length, ego_width)


def _plan_from_profile(
    path: PathPolyline,
    arcs: np.ndarray,
    speeds: np.ndarray,
    start_time: int,
    ego_length: float,
    ego_width: float,
) -> EgoPlan:
    positions = path.positions_at(arcs)
    trajectory = Trajectory(
        xs=positions[:, 0],
        ys=positions[:, 1],
        headings=path.headings_at(arcs),
        speeds=speeds,
        start_index=start_time,
    )
    return EgoPlan(
        path=path,
        start_arc=float(arcs[0]),
        speed_profile=speeds,
        trajectory=trajectory,
        ego_length=ego_length,
        ego_width=ego_width,
    )


def build_reference_plan(
    route: Route,
    start: AgentState,
    graph: LaneGraph,
    config: PlannerConfig,
    connector_rng: random.Random | None = None,
    ego_length: float = 4.7,
    ego_width: float = 2.1,
) -> EgoPlan:
    """Reference plan for a fresh route from the ego's current state."""
    track = build_reference_track(route, start, graph, config, connector_rng)
    return plan_from_state(track, start, 0.0, config, ego_length, ego_width)


def revise_plan(
    plan: EgoPlan,
    predictions: dict[int, object],
    agents: list[Agent],
    config: PlannerConfig,
) -> tuple[EgoPlan, PlanAction]:
    """Brake before the earliest predicted collision, if any.

    Only time-and-space collisions between predicted samples and the plan
    trigger braking; a refined, yielding sample that merely crosses the
    path in space does not. Distances are measured along the plan path from
    the ego front bumper.
    """
    dims_by_id = {agent.id: agent.dims for agent in agents}
    pairs = [
        (pred.samples, dims_by_id[agent_id])
        for agent_id, pred in sorted(predictions.items())
        if pred.samples and agent_id in dims_by_id
    ]
    cross = earliest_cross_distance(plan.trajectory, plan.dims, pairs)
    if cross is None:
        return plan, PlanAction.PROCEED

    dt = config.step_seconds
    d = max(cross - 0.5 * plan.ego_length, 0.0)
    rate = config.emergency_decel if d < config.emergency_distance else config.comfort_decel
    v0 = float(plan.speed_profile[0])
    n = len(plan.speed_profile) - 1
    braking = np.concatenate([[v0], braking_speeds(v0, rate, n, dt)])
    speeds = np.minimum(plan.speed_profile, braking)
    arcs = plan.start_arc + np.concatenate([[0.0], np.cumsum(speeds[1:] * dt)])
    revised = _plan_from_profile(
        plan.path, arcs, speeds, plan.trajectory.start_index, plan.ego_length, plan.ego_width
    )
    return revised, PlanAction.SLOW_DOWN
