"""Lane-graph map representation with route search and goal-based selection."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Point2
from .paths import CENTERLINE_SPACING, PathPolyline, connector_points, densify

GOAL_RADIUS = 3.0
DEFAULT_MAX_DEPTH = 10
ROUTE_HORIZON_SECONDS = 8.0

# Junction randomization window: exit within the last quarter of the upstream
# lane, entry within the first quarter of the downstream lane.
JUNCTION_EXIT_WINDOW = (0.75, 1.0)
JUNCTION_ENTRY_WINDOW = (0.0, 0.25)


@dataclass(frozen=True)
class Lane:
    id: int
    centerline: tuple[Point2, ...]
    speed_limit: float
    successors: tuple[int, ...] = ()
    signal_red: bool = False

    def __post_init__(self) -> None:
        if len(self.centerline) < 2:
            raise ValueError(f"lane {self.id}: centerline needs at least 2 points")
        for a, b in zip(self.centerline, self.centerline[1:]):
            if a.distance_to(b) < 1e-9:
                raise ValueError(f"lane {self.id}: repeated consecutive centerline point")
        if self.speed_limit <= 0.0:
            raise ValueError(f"lane {self.id}: speed limit must be positive")
        object.__setattr__(self, "centerline", tuple(self.centerline))
        object.__setattr__(self, "successors", tuple(self.successors))

    @cached_property
    def path(self) -> PathPolyline:
        return PathPolyline.from_points(list(self.centerline))

    @property
    def length(self) -> float:
        return self.path.total_length


@dataclass(frozen=True)
class Route:
    lane_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.lane_ids:
            raise ValueError("empty route")
        object.__setattr__(self, "lane_ids", tuple(self.lane_ids))


@dataclass
class LaneGraph:
    lanes: dict[int, Lane]
    _route_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _path_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for lane in self.lanes.values():
            for succ in lane.successors:
                if succ not in self.lanes:
                    raise ValueError(f"lane {lane.id}: successor {succ} does not exist")
                if succ == lane.id:
                    raise ValueError(f"lane {lane.id}: self-loop successor")

    def __len__(self) -> int:
        return len(self.lanes)

    def lane(self, lane_id: int) -> Lane:
        return self.lanes[lane_id]

    def is_connected(self, route: Route) -> bool:
        return all(
            b in self.lanes[a].successors for a, b in zip(route.lane_ids, route.lane_ids[1:])
        ) and all(lane_id in self.lanes for lane_id in route.lane_ids)


def closest_lane(graph: LaneGraph, point: Point2) -> int:
    """Lane id minimizing centerline distance; ties go to the smallest id."""
    if not graph.lanes:
        raise ValueError("empty lane graph")
    best_id = None
    best_dist = math.inf
    for lane_id in sorted(graph.lanes):
        dist, _ = graph.lanes[lane_id].path.project(point.x, point.y)
        if dist < best_dist:
            best_dist = dist
            best_id = lane_id
    return best_id


def closest_lane_distance(graph: LaneGraph, point: Point2) -> tuple[int | None, float]:
    if not graph.lanes:
        return None, math.inf
    lane_id = closest_lane(graph, point)
    dist, _ = graph.lanes[lane_id].path.project(point.x, point.y)
    return lane_id, dist


def enumerate_routes(
    graph: LaneGraph,
    start: int,
    min_length: float | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> list[Route]:
    """All successor chains from `start`, expanded until long or deep enough.

    A chain stops growing once its cumulative centerline length reaches
    min_length, its depth reaches max_depth, or the last lane has no
    successors. Output is ordered lexicographically by lane-id sequence.
    """
    if start not in graph.lanes:
        raise ValueError(f"unknown start lane {start}")
    if min_length is None:
        min_length = graph.lanes[start].speed_limit * ROUTE_HORIZON_SECONDS
    key = (start, float(min_length), int(max_depth))
    cached = graph._route_cache.get(key)
    if cached is not None:
        return cached

    results: list[Route] = []

    def expand(seq: list[int], length: float) -> None:
        successors = sorted(graph.lanes[seq[-1]].successors)
        if length >= min_length or len(seq) >= max_depth or not successors:
            results.append(Route(tuple(seq)))
            return
        for succ in successors:
            expand(seq + [succ], length + graph.lanes[succ].length)

    expand([start], graph.lanes[start].length)
    results.sort(key=lambda r: r.lane_ids)
    graph._route_cache[key] = results
    return results


def route_path_with_limits(
    graph: LaneGraph,
    route: Route,
    junction_rng: random.Random | None = None,
) -> tuple[PathPolyline, tuple[tuple[float, float], ...]]:
    """Continuous geometry for a route plus piecewise speed-limit marks.

    Consecutive lanes are joined by cubic Bezier connectors; when a rng is
    given the junction points are sampled inside the exit/entry windows,
    otherwise the connector runs from lane end to lane start. Marks are
    (start_arc, limit) pairs; connectors carry the smaller adjoining limit.
    """
    lanes = [graph.lanes[i] for i in route.lane_ids]
    pieces: list[np.ndarray] = []
    marks: list[tuple[float, float]] = []
    arc_done = 0.0

    def add_piece(points: np.ndarray, limit: float) -> None:
        nonlocal arc_done
        if points.shape[0] == 0:
            return
        marks.append((arc_done, limit))
        if points.shape[0] > 1:
            arc_done += float(np.sum(np.hypot(*np.diff(points, axis=0).T)))
        pieces.append(points)

    entry_arc = 0.0
    for i, lane in enumerate(lanes):
        if i + 1 < len(lanes):
            nxt = lanes[i + 1]
            if junction_rng is not None:
                exit_frac = junction_rng.uniform(*JUNCTION_EXIT_WINDOW)
                entry_frac = junction_rng.uniform(*JUNCTION_ENTRY_WINDOW)
            else:
                exit_frac, entry_frac = 1.0, 0.0
            exit_arc = max(exit_frac * lane.length, min(entry_arc, lane.length))
            body = lane.path.sub_points(entry_arc, exit_arc)
            add_piece(densify(body, CENTERLINE_SPACING), lane.speed_limit)
            next_entry_arc = entry_frac * nxt.length
            connector = connector_points(
                lane.path.point_at(exit_arc),
                lane.path.heading_at(exit_arc),
                nxt.path.point_at(next_entry_arc),
                nxt.path.heading_at(next_entry_arc),
            )
            add_piece(
                np.array([[p.x, p.y] for p in connector]),
                min(lane.speed_limit, nxt.speed_limit),
            )
            entry_arc = next_entry_arc
        else:
            body = lane.path.sub_points(entry_arc, lane.length)
            add_piece(densify(body, CENTERLINE_SPACING), lane.speed_limit)

    path = PathPolyline(np.vstack(pieces))
    return path, tuple(marks)


def route_path(graph: LaneGraph, route: Route, junction_rng: random.Random | None = None) -> PathPolyline:
    """Route geometry; deterministic (and cached) when no rng is given."""
    if junction_rng is None:
        cached = graph._path_cache.get(route.lane_ids)
        if cached is not None:
            return cached
        path, _ = route_path_with_limits(graph, route, None)
        graph._path_cache[route.lane_ids] = path
        return path
    path, _ = route_path_with_limits(graph, route, junction_rng)
    return path


def select_route(
    routes: list[Route],
    graph: LaneGraph,
    goal: Point2 | None = None,
    rng: random.Random | None = None,
    goal_radius: float = GOAL_RADIUS,
) -> Route:
    """Goal-directed route choice with a seeded random fallback.

    Routes passing within goal_radius of the goal compete on along-route
    distance to the point closest to the goal; otherwise (or with no goal)
    the pick is uniform from the given rng.
    """
    if not routes:
        raise ValueError("no routes to select from")
    ordered = sorted(routes, key=lambda r: r.lane_ids)
    if goal is not None:
        qualifying: list[tuple[float, tuple[int, ...], Route]] = []
        for route in ordered:
            path = route_path(graph, route)
            dist, arc = path.project(goal.x, goal.y)
            if dist <= goal_radius:
                qualifying.append((arc, route.lane_ids, route))
        if qualifying:
            return min(qualifying)[2]
    if rng is None:
        raise ValueError("rng required when no route reaches the goal")
    return ordered[rng.randrange(len(ordered))]
