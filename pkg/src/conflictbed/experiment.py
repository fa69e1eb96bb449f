"""Batch experiment runner: paired rollouts per predictor plus comparison tables."""

from __future__ import annotations

import concurrent.futures
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import MetricsReport, ScenarioOutcome, aggregate, build_outcome
from .planner import PlannerConfig
from .predictor import PredictorConfig, PredictorKind
from .relation import HeuristicRelationModel, TableRelationModel
from .scenario_io import (
    Scenario,
    load_scenario,
    outcome_from_dict,
    parse_scenario,
    results_to_dict,
    SyntheticParams,
    SyntheticTemplate,
    generate_synthetic,
)
from .simulator import SimConfig, run_closed_loop

PREDICTOR_NAMES = tuple(kind.value for kind in PredictorKind)
MIXED_TEMPLATE = "mixed"


@dataclass(frozen=True)
class RunConfig:
    """One experiment: a scenario batch rolled out under one or more predictors."""

    predictors: tuple[str, ...]
    scenario_dir: str | None = None
    synthetic_template: str | None = None
    synthetic_count: int = 0
    relation_threshold: float = 0.5
    seed: int = 0
    horizon_steps: int = 80
    workers: int = 1
    reactive: bool = True
    relation_table_text: str | None = None

    def __post_init__(self) -> None:
        if not self.predictors:
            raise ValueError("at least one predictor required")
        unknown = [p for p in self.predictors if p not in PREDICTOR_NAMES]
        if unknown:
            raise ValueError(
                f"unknown predictor {unknown[0]!r}; valid names: {', '.join(PREDICTOR_NAMES)}"
            )
        if self.scenario_dir is not None and self.synthetic_template is not None:
            raise ValueError("give either a scenario directory or a synthetic source, not both")
        if self.synthetic_template is not None and self.synthetic_count < 1:
            raise ValueError("synthetic source needs a positive scenario count")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def scenario_seed(master_seed: int, scenario_id: str) -> int:
    """Stable per-scenario seed shared by every predictor (paired comparison)."""
    return (master_seed * 1_000_003 + zlib.crc32(scenario_id.encode())) % (2**63)


def gather_scenarios(config: RunConfig) -> list[Scenario]:
    """Load or generate the scenario batch; any failure aborts before rollouts."""
    if config.scenario_dir is not None:
        directory = Path(config.scenario_dir)
        paths = sorted(directory.glob("*.json"))
        if not paths:
            raise ValueError(f"no scenario files in {directory}")
        return [load_scenario(p) for p in paths]
    if config.synthetic_template is None:
        raise ValueError("no scenario source: give a directory or a synthetic template")

    if config.synthetic_template == MIXED_TEMPLATE:
        templates = list(SyntheticTemplate)
    else:
        templates = [SyntheticTemplate(config.synthetic_template)]
    scenarios = []
    for i in range(config.synthetic_count):
        template = templates[i % len(templates)]
        scenarios.append(
            generate_synthetic(template, SyntheticParams(seed=config.seed * 100_000 + i))
        )
    return scenarios


def _relation_model(config: RunConfig):
    if config.relation_table_text is not None:
        return TableRelationModel.from_text(config.relation_table_text)
    return HeuristicRelationModel()


def _run_one_scenario(args) -> tuple[str, dict[str, ScenarioOutcome]]:
    scenario_doc, config = args
    scenario = parse_scenario(scenario_doc)
    relation_model = _relation_model(config)
    seed = scenario_seed(config.seed, scenario.scenario_id)
    outcomes: dict[str, ScenarioOutcome] = {}
    for name in config.predictors:
        result = run_closed_loop(
            scenario,
            PredictorKind(name),
            relation_model,
            planner_config=PlannerConfig(),
            predictor_config=PredictorConfig(relation_threshold=config.relation_threshold),
            sim_config=SimConfig(
                horizon_steps=config.horizon_steps, seed=seed, reactive=config.reactive
            ),
        )
        outcomes[name] = build_outcome(result)
    return scenario.scenario_id, outcomes


def run_experiment(config: RunConfig) -> dict[str, dict]:
    """Roll out every (scenario, predictor) pair; one results payload per predictor."""
    return run_on_scenarios(gather_scenarios(config), config)


def run_on_scenarios(scenarios: list[Scenario], config: RunConfig) -> dict[str, dict]:
    """Experiment over an explicit scenario batch.

    The per-scenario seed is shared across predictors so metric differences
    reflect the predictor, not the sampled randomness. Worker count never
    changes the numeric output; results are merged in scenario-id order.
    """
    from .scenario_io import scenario_to_dict

    ids = [s.scenario_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scenario ids in batch")

    tasks = [(scenario_to_dict(s), config) for s in scenarios]
    if config.workers == 1:
        rows = [_run_one_scenario(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_run_one_scenario, tasks))
    rows.sort(key=lambda r: r[0])

    results: dict[str, dict] = {}
    for name in config.predictors:
        outcomes = [row[1][name] for row in rows]
        report = aggregate(outcomes)
        echo = {
            "predictor": name,
            "seed": config.seed,
            "relation_threshold": config.relation_threshold,
            "horizon_steps": config.horizon_steps,
            "reactive": config.reactive,
            "scenario_dir": config.scenario_dir,
            "synthetic_template": config.synthetic_template,
            "synthetic_count": config.synthetic_count,
            "scenario_ids": sorted(ids),
            "relation_table": config.relation_table_text is not None,
        }
        results[name] = results_to_dict(echo, outcomes, report)
    return results


_COLUMNS = (
    ("minFDE[m]", "min_fde_mean", "min", "{:.2f}"),
    ("minADE[m]", "min_ade_mean", "min", "{:.2f}"),
    ("Recall(Top1)", "conflict_recall_top1", "max", "{:.2%}"),
    ("Recall(TopK)", "conflict_recall_topk", "max", "{:.2%}"),
    ("RelationAcc", "relation_accuracy", "max", "{:.2%}"),
    ("CollisionRate", "collision_rate", "min", "{:.2%}"),
    ("Progress[m]", "progress_mean", "max", "{:.2f}"),
    ("StuckRate", "stuck_rate", "min", "{:.2%}"),
)


def compare(results: list[dict]) -> str:
    """Aligned comparison table, one predictor per row, best value starred."""
    if not results:
        raise ValueError("nothing to compare")
    id_sets = [tuple(r["config"]["scenario_ids"]) for r in results]
    if len(set(id_sets)) != 1:
        raise ValueError("results cover different scenario sets")

    header = ["Predictor"] + [c[0] for c in _COLUMNS]
    rows: list[list[str]] = []
    values: list[list[float | None]] = []
    for result in results:
        report = result["report"]
        values.append([report.get(key) for _, key, _, _ in _COLUMNS])

    best: list[float | None] = []
    for j, (_, _, direction, _) in enumerate(_COLUMNS):
        defined = [v[j] for v in values if v[j] is not None]
        if not defined:
            best.append(None)
        else:
            best.append(min(defined) if direction == "min" else max(defined))

    for result, vals in zip(results, values):
        row = [result["config"]["predictor"]]
        for j, (_, _, _, fmt) in enumerate(_COLUMNS):
            v = vals[j]
            if v is None:
                row.append("n/a")
            else:
                cell = fmt.format(v)
                if best[j] is not None and v == best[j]:
                    cell += "*"
                row.append(cell)
        rows.append(row)

    widths = [max(len(header[j]), *(len(r[j]) for r in rows)) for j in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[j]) for j, h in enumerate(header)),
        "  ".join("-" * widths[j] for j in range(len(header))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
    return "\n".join(lines)
