"""Geometric and kinematic primitives shared by the planner, predictor and simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

TIME_STEP = 0.1
SPEED_CONSISTENCY_TOL = 0.5


def normalize_heading(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def heading_difference(a: float, b: float) -> float:
    """Smallest signed angle from b to a."""
    return normalize_heading(a - b)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


class AgentKind(Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


# Fallback footprint sizes (length, width) when a scenario omits them.
DEFAULT_DIMENSIONS: dict[AgentKind, tuple[float, float]] = {
    AgentKind.VEHICLE: (4.7, 2.1),
    AgentKind.CYCLIST: (1.8, 0.6),
    AgentKind.PEDESTRIAN: (0.7, 0.7),
}


@dataclass(frozen=True)
class AgentState:
    """Kinematic state of one agent at a single 0.1 s step."""

    position: Point2
    heading: float
    speed: float
    time_index: int

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError(f"negative speed {self.speed}")
        object.__setattr__(self, "heading", normalize_heading(self.heading))
        object.__setattr__(self, "time_index", int(self.time_index))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered kinematic states at consecutive 0.1 s indices, stored as arrays.

    Positions must stay consistent with the stored speeds: each step
    displacement may differ from speed * 0.1 s by at most 0.5 m.
    """

    xs: np.ndarray
    ys: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    start_index: int = 0
    step_seconds: float = TIME_STEP

    def __post_init__(self) -> None:
        for name in ("xs", "ys", "headings", "speeds"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.xs.shape[0]
        if n == 0:
            raise ValueError("empty trajectory")
        for name in ("ys", "headings", "speeds"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length mismatch")
        if not np.all(np.isfinite(self.xs)) or not np.all(np.isfinite(self.ys)):
            raise ValueError("non-finite trajectory coordinates")
        if np.any(self.speeds < 0.0):
            raise ValueError("negative speed in trajectory")
        chords = np.hypot(np.diff(self.xs), np.diff(self.ys))
        expected = self.speeds[:-1] * self.step_seconds
        bad = np.abs(chords - expected) > SPEED_CONSISTENCY_TOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"speed-inconsistent step at index {i}: moved {chords[i]:.3f} m "
                f"while speed {self.speeds[i]:.3f} m/s implies {expected[i]:.3f} m"
            )

    def __len__(self) -> int:
        return self.xs.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.start_index == other.start_index
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
            and np.array_equal(self.headings, other.headings)
            and np.array_equal(self.speeds, other.speeds)
        )

    @classmethod
    def from_states(cls, states: Sequence[AgentState]) -> "Trajectory":
        if not states:
            raise ValueError("empty trajectory")
        indices = [s.time_index for s in states]
        if any(b - a != 1 for a, b in zip(indices, indices[1:])):
            raise ValueError("time indices must increase by exactly 1")
        return cls(
            xs=np.array([s.position.x for s in states]),
            ys=np.array([s.position.y for s in states]),
            headings=np.array([s.heading for s in states]),
            speeds=np.array([s.speed for s in states]),
            start_index=states[0].time_index,
        )

    @cached_property
    def positions(self) -> np.ndarray:
        pos = np.column_stack([self.xs, self.ys])
        pos.setflags(write=False)
        return pos

    @cached_property
    def arc_offsets(self) -> np.ndarray:
        """Cumulative path distance from the first state, per state."""
        chords = np.hypot(np.diff(self.xs), np.diff(self.ys))
        arcs = np.concatenate([[0.0], np.cumsum(chords)])
        arcs.setflags(write=False)
        return arcs

    @property
    def end_index(self) -> int:
        return self.start_index + len(self) - 1

    def state_at(self, i: int) -> AgentState:
        if i < 0:
            i += len(self)
        return AgentState(
            position=Point2(float(self.xs[i]), float(self.ys[i])),
            heading=float(self.headings[i]),
            speed=float(self.speeds[i]),
            time_index=self.start_index + i,
        )

    def states(self) -> tuple[AgentState, ...]:
        return tuple(self.state_at(i) for i in range(len(self)))

    def last_state(self) -> AgentState:
        return self.state_at(len(self) - 1)

    def slice_by_time(self, first_index: int, last_index: int) -> "Trajectory":
        """States with time index in [first_index, last_index], clipped to range."""
        lo = max(first_index - self.start_index, 0)
        hi = min(last_index - self.start_index, len(self) - 1)
        if hi < lo:
            raise ValueError("empty time slice")
        return Trajectory(
            xs=self.xs[lo : hi + 1],
            ys=self.ys[lo : hi + 1],
            headings=self.headings[lo : hi + 1],
            speeds=self.speeds[lo : hi + 1],
            start_index=self.start_index + lo,
        )


@dataclass(frozen=True)
class OrientedBox:
    """Axis-free rectangle: center, heading and body dimensions."""

    center: Point2
    heading: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError(f"box dimensions must be positive, got {self.length}x{self.width}")

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counter-clockwise."""
        return box_corners(
            np.array([[self.center.x, self.center.y]]),
            np.array([self.heading]),
            self.length,
            self.width,
        )[0]


def box_corners(centers: np.ndarray, headings: np.ndarray, length: float, width: float) -> np.ndarray:
    """Corners for a batch of same-sized boxes, shape (n, 4, 2)."""
    cos = np.cos(headings)
    sin = np.sin(headings)
    hl, hw = 0.5 * length, 0.5 * width
    # Local corner offsets, counter-clockwise starting front-left.
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.stack([np.stack([cos, -sin], axis=-1), np.stack([sin, cos], axis=-1)], axis=-2)
    return centers[:, None, :] + np.einsum("nij,kj->nki", rot, local)


def boxes_overlap_batch(
    centers_a: np.ndarray,
    headings_a: np.ndarray,
    dims_a: tuple[float, float],
    centers_b: np.ndarray,
    headings_b: np.ndarray,
    dims_b: tuple[float, float],
) -> np.ndarray:
    """Pairwise separating-axis overlap test for n box pairs.

    Closed-set semantics: boxes that merely touch count as overlapping.
    """
    corners_a = box_corners(centers_a, headings_a, *dims_a)
    corners_b = box_corners(centers_b, headings_b, *dims_b)
    # Candidate axes: both edge directions of each rectangle.
    axes = np.concatenate(
        [
            np.stack([np.cos(headings_a), np.sin(headings_a)], axis=-1)[:, None, :],
            np.stack([-np.sin(headings_a), np.cos(headings_a)], axis=-1)[:, None, :],
            np.stack([np.cos(headings_b), np.sin(headings_b)], axis=-1)[:, None, :],
            np.stack([-np.sin(headings_b), np.cos(headings_b)], axis=-1)[:, None, :],
        ],
        axis=1,
    )  # (n, 4, 2)
    proj_a = np.einsum("nkj,naj->nak", corners_a, axes)  # (n, 4 axes, 4 corners)
    proj_b = np.einsum("nkj,naj->nak", corners_b, axes)
    sep = (proj_a.max(axis=2) < proj_b.min(axis=2)) | (proj_b.max(axis=2) < proj_a.min(axis=2))
    return ~np.any(sep, axis=1)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """True iff the closed rectangles intersect (touching counts)."""
    return bool(
        boxes_overlap_batch(
            np.array([[a.center.x, a.center.y]]),
            np.array([a.heading]),
            (a.length, a.width),
            np.array([[b.center.x, b.center.y]]),
            np.array([b.heading]),
            (b.length, b.width),
        )[0]
    )


def footprint(state: AgentState, length: float, width: float) -> OrientedBox:
    """Bounding box of an agent at a given state."""
    return OrientedBox(center=state.position, heading=state.heading, length=length, width=width)


@dataclass(frozen=True)
class Agent:
    """Traffic participant with its observed history (most recent 1.1 s)."""

    id: int
    kind: AgentKind
    length: float
    width: float
    history: Trajectory

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError(f"agent {self.id}: dimensions must be positive")

    @property
    def current_state(self) -> AgentState:
        return self.history.last_state()

    @property
    def dims(self) -> tuple[float, float]:
        return (self.length, self.width)


_BEZIER_DENSE_N = 256


def _bezier_eval(control: np.ndarray, ts: np.ndarray) -> np.ndarray:
    t = ts[:, None]
    u = 1.0 - t
    return (
        u * u * u * control[0]
        + 3.0 * u * u * t * control[1]
        + 3.0 * u * t * t * control[2]
        + t * t * t * control[3]
    )


def _control_array(control: Sequence[Point2]) -> np.ndarray:
    if len(control) != 4:
        raise ValueError(f"cubic Bezier needs 4 control points, got {len(control)}")
    return np.array([[p.x, p.y] for p in control], dtype=float)


def bezier_point(control: Sequence[Point2], t: float) -> Point2:
    """Cubic Bernstein evaluation at parameter t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Bezier parameter {t} outside [0, 1]")
    pts = _bezier_eval(_control_array(control), np.array([t]))
    return Point2(float(pts[0, 0]), float(pts[0, 1]))


def sample_bezier(control: Sequence[Point2], spacing: float) -> list[Point2]:
    """Points along the curve spaced roughly `spacing` apart by arc length.

    Returns the exact endpoints; a fully degenerate curve collapses to a
    single point.
    """
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    ctrl = _control_array(control)
    if np.allclose(ctrl, ctrl[0], atol=1e-12):
        return [control[0]]
    dense = _bezier_eval(ctrl, np.linspace(0.0, 1.0, _BEZIER_DENSE_N))
    arcs = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
    total = float(arcs[-1])
    n = max(1, int(round(total / spacing)))
    targets = np.linspace(0.0, total, n + 1)
    xs = np.interp(targets, arcs, dense[:, 0])
    ys = np.interp(targets, arcs, dense[:, 1])
    points = [Point2(float(x), float(y)) for x, y in zip(xs, ys)]
    points[0] = control[0]
    points[-1] = control[3]
    return points
