"""Discrete speed-profile helpers shared by the planner, predictor and simulator.

All profiles advance positions by the *arriving* state's speed: the step from
state k to k+1 covers speeds[k+1] * dt meters. Braking caps below are exact
for that convention, so a profile that respects a cap never overruns its stop
target.
"""

from __future__ import annotations

import math

import numpy as np


def step_speed_toward(v: float, target: float, accel: float, decel: float, dt: float) -> float:
    """One-step speed adjustment toward a target, rate-limited on both sides."""
    if v < target:
        return min(v + accel * dt, target)
    return max(v - decel * dt, target)


def braking_speeds(v0: float, rate: float, n: int, dt: float) -> np.ndarray:
    """Speeds of the n states following a state at v0 while braking at `rate`."""
    steps = np.arange(1, n + 1, dtype=float)
    return np.maximum(0.0, v0 - rate * steps * dt)


def braking_distance(v0: float, rate: float, dt: float) -> float:
    """Total distance covered by the discrete braking profile from speed v0."""
    if v0 <= 0.0:
        return 0.0
    m = int(math.floor(v0 / (rate * dt)))
    return dt * (m * v0 - rate * dt * m * (m + 1) / 2.0)


def speed_cap_for_stop(remaining: float, decel: float, dt: float) -> float:
    """Largest next-step speed that still allows stopping within `remaining`.

    Uses the continuous bound w^2/(2a) + w*dt <= remaining, which is slightly
    conservative for the discrete profile, so following the cap never
    overruns and never requires more than `decel` per step.
    """
    if remaining <= 0.0:
        return 0.0
    return max(0.0, math.sqrt(decel * decel * dt * dt + 2.0 * decel * remaining) - decel * dt)


def stop_rate_for_distance(v0: float, distance: float, dt: float, max_rate: float) -> float:
    """Constant deceleration that brings v0 to rest within `distance`.

    Returns the minimal such rate, capped at max_rate; the cap means the stop
    may overrun when the distance is too short even for maximal braking.
    """
    if v0 <= 0.0:
        return 0.0
    if distance <= 0.0:
        return max_rate
    return min(v0 * v0 / (2.0 * distance), max_rate)
