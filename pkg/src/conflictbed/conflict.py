"""Conflict and collision detection between trajectories.

Two trajectories conflict when their footprints overlap at *any* pair of
path indices (crossing in space); they collide when the footprints overlap
at the *same* time index (crossing in time and space). A collision always
implies a conflict, not the other way around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Point2, Trajectory, boxes_overlap_batch
from .lane_map import LaneGraph, closest_lane_distance
from .paths import PathPolyline

Dims = tuple[float, float]

BLOCKING_HEADING_TOL = math.radians(30.0)
SIGNAL_LANE_RADIUS = 5.0


class Relation(Enum):
    """Conflict relation of a traffic agent relative to the ego."""

    PASS = "pass"
    YIELD = "yield"


class ConflictClass(Enum):
    NO_CONFLICT = "no_conflict"
    TRIVIAL_BLOCKING = "trivial_blocking"
    TRIVIAL_TRAFFIC_LIGHT = "trivial_traffic_light"
    NON_TRIVIAL = "non_trivial"


@dataclass(frozen=True)
class Conflict:
    """Earliest spatial crossing between two trajectories.

    Indices are positions into each trajectory; distances are path meters
    from each trajectory's first state to its crossing state.
    """

    index_a: int
    index_b: int
    cross_point: Point2
    distance_a: float
    distance_b: float
    agent_a: int = -1
    agent_b: int = -1


def _half_diagonal(dims: Dims) -> float:
    return 0.5 * math.hypot(dims[0], dims[1])


def _overlap_pairs(traj_a: Trajectory, dims_a: Dims, traj_b: Trajectory, dims_b: Dims) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (ia, ib) whose footprints overlap, via broad-phase pruning."""
    reach = _half_diagonal(dims_a) + _half_diagonal(dims_b)
    dx = traj_a.xs[:, None] - traj_b.xs[None, :]
    dy = traj_a.ys[:, None] - traj_b.ys[None, :]
    ia, ib = np.nonzero(dx * dx + dy * dy <= reach * reach)
    if ia.size == 0:
        return ia, ib
    hit = boxes_overlap_batch(
        traj_a.positions[ia],
        traj_a.headings[ia],
        dims_a,
        traj_b.positions[ib],
        traj_b.headings[ib],
        dims_b,
    )
    return ia[hit], ib[hit]


def detect_spatial_conflict(
    traj_a: Trajectory,
    dims_a: Dims,
    traj_b: Trajectory,
    dims_b: Dims,
    agent_a: int = -1,
    agent_b: int = -1,
) -> Conflict | None:
    """Earliest crossing in space, scanning all index pairs.

    Time indices are deliberately ignored. The returned conflict minimizes
    distance along A, breaking ties by distance along B, then by indices.
    """
    ia, ib = _overlap_pairs(traj_a, dims_a, traj_b, dims_b)
    if ia.size == 0:
        return None
    arcs_a = traj_a.arc_offsets[ia]
    arcs_b = traj_b.arc_offsets[ib]
    order = np.lexsort((ib, ia, arcs_b, arcs_a))
    k = order[0]
    i, j = int(ia[k]), int(ib[k])
    cross = Point2(
        0.5 * float(traj_a.xs[i] + traj_b.xs[j]),
        0.5 * float(traj_a.ys[i] + traj_b.ys[j]),
    )
    return Conflict(
        index_a=i,
        index_b=j,
        cross_point=cross,
        distance_a=float(arcs_a[k]),
        distance_b=float(arcs_b[k]),
        agent_a=agent_a,
        agent_b=agent_b,
    )


def collision_time_indices(traj_a: Trajectory, dims_a: Dims, traj_b: Trajectory, dims_b: Dims) -> np.ndarray:
    """Absolute time indices where both footprints overlap simultaneously."""
    lo = max(traj_a.start_index, traj_b.start_index)
    hi = min(traj_a.end_index, traj_b.end_index)
    if hi < lo:
        return np.zeros(0, dtype=int)
    sa = lo - traj_a.start_index
    sb = lo - traj_b.start_index
    n = hi - lo + 1
    pa = traj_a.positions[sa : sa + n]
    pb = traj_b.positions[sb : sb + n]
    reach = _half_diagonal(dims_a) + _half_diagonal(dims_b)
    d = pa - pb
    near = np.nonzero(np.einsum("ij,ij->i", d, d) <= reach * reach)[0]
    if near.size == 0:
        return near
    hit = boxes_overlap_batch(
        pa[near],
        traj_a.headings[sa + near],
        dims_a,
        pb[near],
        traj_b.headings[sb + near],
        dims_b,
    )
    return near[hit] + lo


def detect_collision(traj_a: Trajectory, dims_a: Dims, traj_b: Trajectory, dims_b: Dims) -> int | None:
    """Smallest shared time index with overlapping footprints, if any."""
    hits = collision_time_indices(traj_a, dims_a, traj_b, dims_b)
    return int(hits[0]) if hits.size else None


def label_relation(conflict: Conflict, traj_ego: Trajectory, traj_agent: Trajectory) -> Relation:
    """Pass if the agent reaches its crossing state strictly first, else Yield."""
    ego_arrival = traj_ego.start_index + conflict.index_a
    agent_arrival = traj_agent.start_index + conflict.index_b
    return Relation.PASS if agent_arrival < ego_arrival else Relation.YIELD


def classify_conflict(
    conflict: Conflict,
    traj_ego: Trajectory,
    dims_ego: Dims,
    traj_agent: Trajectory,
    dims_agent: Dims,
    graph: LaneGraph | None = None,
) -> ConflictClass:
    """Sort a conflict into blocking / traffic-light / non-trivial buckets.

    Blocking: the yielding side's crossing state sits on the passing side's
    path (laterally within half the summed widths) with near-parallel
    headings. Traffic light: the yielding side's current lane carries a red
    signal flag. Everything else requires relation inference.
    """
    relation = label_relation(conflict, traj_ego, traj_agent)
    if relation == Relation.YIELD:
        yielder, y_idx, y_dims = traj_agent, conflict.index_b, dims_agent
        passer, p_dims = traj_ego, dims_ego
    else:
        yielder, y_idx, y_dims = traj_ego, conflict.index_a, dims_ego
        passer, p_dims = traj_agent, dims_agent

    y_x = float(yielder.xs[y_idx])
    y_y = float(yielder.ys[y_idx])
    y_heading = float(yielder.headings[y_idx])
    passer_path = PathPolyline(passer.positions)
    lateral, arc = passer_path.project(y_x, y_y)
    heading_gap = abs(_angle_diff(y_heading, passer_path.heading_at(arc)))
    if lateral <= 0.5 * (y_dims[1] + p_dims[1]) and heading_gap <= BLOCKING_HEADING_TOL:
        return ConflictClass.TRIVIAL_BLOCKING

    if graph is not None and graph.lanes:
        lane_id, dist = closest_lane_distance(graph, Point2(float(yielder.xs[0]), float(yielder.ys[0])))
        if lane_id is not None and dist <= SIGNAL_LANE_RADIUS and graph.lanes[lane_id].signal_red:
            return ConflictClass.TRIVIAL_TRAFFIC_LIGHT

    return ConflictClass.NON_TRIVIAL


def _angle_diff(a: float, b: float) -> float:
    return math.atan2(math.sin(a - b), math.cos(a - b))


def earliest_cross_distance(plan_trajectory: Trajectory, plan_dims: Dims, predictions) -> float | None:
    """Shortest plan-path distance to any time-and-space collision.

    `predictions` is an iterable of (samples, dims) pairs; samples that only
    cross in space (time-separated) do not count.
    """
    best: float | None = None
    plan_arcs = plan_trajectory.arc_offsets
    for samples, dims in predictions:
        for sample in samples:
            hits = collision_time_indices(plan_trajectory, plan_dims, sample, dims)
            if hits.size == 0:
                continue
            arc = float(np.min(plan_arcs[hits - plan_trajectory.start_index]))
            if best is None or arc < best:
                best = arc
    return best
