"""Arc-length parameterized polyline paths and Bezier connectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import Point2, sample_bezier

CONNECTOR_SPACING = 0.5
CENTERLINE_SPACING = 1.0
MIN_ONBOARD_LOOKAHEAD = 3.0


def densify(points: np.ndarray, max_spacing: float) -> np.ndarray:
    """Insert vertices so consecutive points are at most max_spacing apart."""
    if points.shape[0] < 2:
        return points
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        seg = float(np.hypot(*(b - a)))
        if seg <= 1e-12:
            continue
        pieces = max(1, int(math.ceil(seg / max_spacing)))
        for k in range(1, pieces + 1):
            out.append(a + (b - a) * (k / pieces))
    return np.array(out)


def _dedupe(points: np.ndarray) -> np.ndarray:
    if points.shape[0] < 2:
        return points
    keep = np.concatenate([[True], np.hypot(*np.diff(points, axis=0).T) > 1e-9])
    return points[keep]


@dataclass(frozen=True, eq=False)
class PathPolyline:
    """Immutable 2D polyline with cumulative arc-length lookups."""

    points: np.ndarray  # (n, 2)

    def __post_init__(self) -> None:
        pts = _dedupe(np.ascontiguousarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError("path needs an (n, 2) vertex array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: list[Point2] | np.ndarray, max_spacing: float | None = None) -> "PathPolyline":
        arr = np.array([[p.x, p.y] for p in points]) if not isinstance(points, np.ndarray) else points
        arr = _dedupe(np.asarray(arr, dtype=float))
        if max_spacing is not None:
            arr = densify(arr, max_spacing)
        return cls(arr)

    @cached_property
    def cum_arc(self) -> np.ndarray:
        chords = np.hypot(*np.diff(self.points, axis=0).T) if len(self.points) > 1 else np.zeros(0)
        arc = np.concatenate([[0.0], np.cumsum(chords)])
        arc.setflags(write=False)
        return arc

    @cached_property
    def segment_headings(self) -> np.ndarray:
        if len(self.points) < 2:
            return np.zeros(1)
        d = np.diff(self.points, axis=0)
        h = np.arctan2(d[:, 1], d[:, 0])
        h.setflags(write=False)
        return h

    @property
    def total_length(self) -> float:
        return float(self.cum_arc[-1])

    def _segment_index(self, arcs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cum_arc, arcs, side="right") - 1
        return np.clip(idx, 0, max(len(self.points) - 2, 0))

    def positions_at(self, arcs: np.ndarray) -> np.ndarray:
        arcs = np.clip(arcs, 0.0, self.total_length)
        xs = np.interp(arcs, self.cum_arc, self.points[:, 0])
        ys = np.interp(arcs, self.cum_arc, self.points[:, 1])
        return np.column_stack([xs, ys])

    def headings_at(self, arcs: np.ndarray) -> np.ndarray:
        return self.segment_headings[self._segment_index(np.clip(arcs, 0.0, self.total_length))]

    def point_at(self, arc: float) -> Point2:
        pos = self.positions_at(np.array([arc]))[0]
        return Point2(float(pos[0]), float(pos[1]))

    def heading_at(self, arc: float) -> float:
        return float(self.headings_at(np.array([arc]))[0])

    def project(self, x: float, y: float) -> tuple[float, float]:
        """(distance, arc) of the closest point on the path to (x, y)."""
        pts = self.points
        if len(pts) == 1:
            return float(np.hypot(pts[0, 0] - x, pts[0, 1] - y)), 0.0
        a = pts[:-1]
        d = np.diff(pts, axis=0)
        seg_len2 = np.einsum("ij,ij->i", d, d)
        rel = np.array([x, y]) - a
        t = np.clip(np.einsum("ij,ij->i", rel, d) / np.maximum(seg_len2, 1e-18), 0.0, 1.0)
        closest = a + t[:, None] * d
        dists = np.hypot(closest[:, 0] - x, closest[:, 1] - y)
        i = int(np.argmin(dists))
        arc = float(self.cum_arc[i] + t[i] * math.sqrt(seg_len2[i]))
        return float(dists[i]), arc

    def tail_from(self, arc: float) -> np.ndarray:
        """Vertices from the given arc onward, starting at the interpolated point."""
        arc = min(max(arc, 0.0), self.total_length)
        start = self.positions_at(np.array([arc]))[0]
        i = int(np.searchsorted(self.cum_arc, arc, side="right"))
        return _dedupe(np.vstack([start[None, :], self.points[i:]])) if i < len(self.points) else start[None, :]

    def sub_points(self, arc0: float, arc1: float) -> np.ndarray:
        """Vertices between two arcs, with interpolated endpoints."""
        arc0 = min(max(arc0, 0.0), self.total_length)
        arc1 = min(max(arc1, arc0), self.total_length)
        ends = self.positions_at(np.array([arc0, arc1]))
        if arc1 - arc0 < 1e-9:
            return ends[:1]
        i0 = int(np.searchsorted(self.cum_arc, arc0, side="right"))
        i1 = int(np.searchsorted(self.cum_arc, arc1, side="left"))
        return _dedupe(np.vstack([ends[:1], self.points[i0:i1], ends[1:]]))

    def extended(self, extra: float) -> "PathPolyline":
        """Path continued straight along its final heading."""
        if extra <= 0.0 or len(self.points) < 2:
            return self
        h = float(self.segment_headings[-1])
        tip = self.points[-1] + extra * np.array([math.cos(h), math.sin(h)])
        return PathPolyline(np.vstack([self.points, tip[None, :]]))


def connector_points(
    start: Point2, start_heading: float, end: Point2, end_heading: float, spacing: float = CONNECTOR_SPACING
) -> list[Point2]:
    """Cubic Bezier blend between two directed poses."""
    gap = start.distance_to(end)
    if gap < 1e-9:
        return [start]
    pull = gap / 3.0
    control = [
        start,
        Point2(start.x + pull * math.cos(start_heading), start.y + pull * math.sin(start_heading)),
        Point2(end.x - pull * math.cos(end_heading), end.y - pull * math.sin(end_heading)),
        end,
    ]
    return sample_bezier(control, spacing)


def join_pieces(pieces: list[np.ndarray]) -> PathPolyline:
    stacked = np.vstack([p for p in pieces if p.shape[0] > 0])
    return PathPolyline(stacked)


def onboard_onto(path: PathPolyline, position: Point2, heading: float) -> PathPolyline:
    """Blend from an arbitrary pose onto a path via a Bezier connector.

    The merge point sits ahead of the pose's projection so the connector
    stays smooth even when the pose is off to the side of the path.
    """
    dist, arc = path.project(position.x, position.y)
    target_arc = min(arc + max(2.0 * dist, MIN_ONBOARD_LOOKAHEAD), path.total_length)
    target = path.point_at(target_arc)
    target_heading = path.heading_at(target_arc)
    blend = connector_points(position, heading, target, target_heading)
    blend_arr = np.array([[p.x, p.y] for p in blend])
    return join_pieces([blend_arr, path.tail_from(target_arc)])
