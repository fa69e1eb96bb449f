"""Conflict-aware evaluation metrics aggregated over closed-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conflict import Conflict, Relation, detect_spatial_conflict
from .geometry import Trajectory
from .planner import EgoPlan
from .predictor import PredictionSet
from .simulator import RolloutResult

STUCK_DISPLACEMENT = 0.5
MIN_ERROR_STEPS = 10


@dataclass
class ConflictEvent:
    """One ground-truth conflict between an agent and the ego plan."""

    agent_id: int
    identified_top1: bool
    identified_topk: bool
    relation_truth: Relation
    relation_predicted: Relation | None


@dataclass
class ScenarioOutcome:
    scenario_id: str
    collision: bool
    progress_meters: float
    stuck: bool
    conflict_events: list[ConflictEvent] = field(default_factory=list)
    prediction_errors: list[tuple[float, float]] = field(default_factory=list)
    step_conflicts: int = 0
    step_identified_top1: int = 0
    step_identified_topk: int = 0


@dataclass
class MetricsReport:
    """Aggregate metric values; None marks an undefined ratio."""

    scenario_count: int
    conflict_count: int
    conflict_recall_top1: float | None
    conflict_recall_topk: float | None
    relation_accuracy: float | None
    collision_rate: float
    progress_mean: float
    stuck_rate: float
    min_ade_mean: float | None
    min_fde_mean: float | None
    step_recall_top1: float | None
    step_recall_topk: float | None


def score_conflict_identification(
    gt_conflict: Conflict,
    prediction: PredictionSet,
    ego_plan: EgoPlan,
    agent_dims: tuple[float, float],
) -> tuple[bool, bool]:
    """(top-1, top-K) flags: does any (the top) sample cross the plan in space?

    Scored on the pre-refinement candidates; the ground-truth conflict only
    gates whether scoring applies at all.
    """
    del gt_conflict
    candidates = prediction.candidates
    if not candidates:
        return False, False
    plan_traj = ego_plan.trajectory
    top1 = detect_spatial_conflict(plan_traj, ego_plan.dims, candidates[prediction.top_index], agent_dims) is not None
    if top1:
        return True, True
    topk = any(
        detect_spatial_conflict(plan_traj, ego_plan.dims, c, agent_dims) is not None
        for i, c in enumerate(candidates)
        if i != prediction.top_index
    )
    return False, topk


def score_relation(predicted: Relation | None, truth: Relation) -> bool:
    """Correctness of one identified conflict's relation prediction."""
    return predicted == truth


def min_ade_fde(samples, ground_truth: Trajectory) -> tuple[float, float]:
    """Minimum average / final displacement error over prediction samples.

    Lengths are truncated to the shorter of sample and ground truth; the
    two minima are taken independently.
    """
    if len(ground_truth) == 0:
        raise ValueError("empty ground truth")
    samples = list(samples)
    if not samples:
        raise ValueError("no prediction samples")
    best_ade = np.inf
    best_fde = np.inf
    gt_pos = ground_truth.positions
    for sample in samples:
        n = min(len(sample), len(ground_truth))
        err = np.hypot(sample.xs[:n] - gt_pos[:n, 0], sample.ys[:n] - gt_pos[:n, 1])
        best_ade = min(best_ade, float(np.mean(err)))
        best_fde = min(best_fde, float(err[-1]))
    return best_ade, best_fde


def build_outcome(result: RolloutResult) -> ScenarioOutcome:
    """Condense one rollout into the per-scenario metric record.

    A conflict event exists per agent whose rollout future crossed the ego
    plan at any step; it counts as identified if any prediction issued
    before the crossing first materialized flagged it.
    """
    progress = float(result.ego_trajectory.arc_offsets[-1])
    outcome = ScenarioOutcome(
        scenario_id=result.scenario_id,
        collision=result.termination.kind == "collision",
        progress_meters=progress,
        stuck=progress < STUCK_DISPLACEMENT,
    )

    by_agent: dict[int, list] = {}
    for record in result.conflict_records:
        by_agent.setdefault(record.agent_id, []).append(record)
        if record.gt_conflict:
            outcome.step_conflicts += 1
            outcome.step_identified_top1 += int(record.identified_top1)
            outcome.step_identified_topk += int(record.identified_topk)

    for agent_id in sorted(by_agent):
        records = sorted(by_agent[agent_id], key=lambda r: r.step)
        gt_records = [r for r in records if r.gt_conflict]
        if not gt_records:
            continue
        deadline = min(r.first_overlap_index for r in gt_records)
        window = [r for r in records if r.step < deadline]
        identified = [r for r in window if r.identified_topk]
        event = ConflictEvent(
            agent_id=agent_id,
            identified_top1=any(r.identified_top1 for r in window),
            identified_topk=bool(identified),
            relation_truth=gt_records[0].relation_truth,
            relation_predicted=identified[0].relation_predicted if identified else None,
        )
        outcome.conflict_events.append(event)

    for step, predictions in enumerate(result.per_step_predictions):
        for agent_id in sorted(predictions):
            prediction = predictions[agent_id]
            if not prediction.samples:
                continue
            traj = result.agent_trajectories[agent_id]
            if traj.end_index - (step + 1) + 1 < MIN_ERROR_STEPS:
                continue
            future = traj.slice_by_time(step + 1, traj.end_index)
            outcome.prediction_errors.append(min_ade_fde(prediction.samples, future))

    return outcome


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def aggregate(outcomes: list[ScenarioOutcome]) -> MetricsReport:
    """Suite-level metrics over per-scenario outcomes."""
    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    n = len(outcomes)
    events = [e for o in outcomes for e in o.conflict_events]
    identified = [e for e in events if e.identified_topk]
    errors = [e for o in outcomes for e in o.prediction_errors]
    step_conflicts = sum(o.step_conflicts for o in outcomes)
    return MetricsReport(
        scenario_count=n,
        conflict_count=len(events),
        conflict_recall_top1=_ratio(sum(e.identified_top1 for e in events), len(events)),
        conflict_recall_topk=_ratio(len(identified), len(events)),
        relation_accuracy=_ratio(
            sum(score_relation(e.relation_predicted, e.relation_truth) for e in identified),
            len(identified),
        ),
        collision_rate=sum(o.collision for o in outcomes) / n,
        progress_mean=sum(o.progress_meters for o in outcomes) / n,
        stuck_rate=sum(o.stuck for o in outcomes) / n,
        min_ade_mean=float(np.mean([e[0] for e in errors])) if errors else None,
        min_fde_mean=float(np.mean([e[1] for e in errors])) if errors else None,
        step_recall_top1=_ratio(sum(o.step_identified_top1 for o in outcomes), step_conflicts),
        step_recall_topk=_ratio(sum(o.step_identified_topk for o in outcomes), step_conflicts),
    )
