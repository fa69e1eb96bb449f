"""HTTP service exposing scenario generation, rollouts and experiments."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..experiment import RunConfig, compare, run_on_scenarios
from ..metrics import build_outcome
from ..planner import PlannerConfig
from ..predictor import PredictorConfig, PredictorKind
from ..relation import HeuristicRelationModel, TableRelationModel
from ..scenario_io import (
    GenerationError,
    ScenarioFormatError,
    SyntheticParams,
    SyntheticTemplate,
    generate_synthetic,
    outcome_to_dict,
    parse_scenario,
    scenario_to_dict,
)
from ..simulator import SimConfig, run_closed_loop
from .schemas import (
    CompareRequest,
    CompareResponse,
    ExperimentRequest,
    ExperimentResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    RolloutRequest,
    RolloutResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="conflictbed", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/scenarios/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest) -> GenerateResponse:
        if request.template != "mixed":
            try:
                SyntheticTemplate(request.template)
            except ValueError:
                raise HTTPException(
                    status_code=400,
                    detail=f"unknown template {request.template!r}; valid: "
                    + ", ".join(t.value for t in SyntheticTemplate)
                    + ", mixed",
                )
        templates = (
            list(SyntheticTemplate)
            if request.template == "mixed"
            else [SyntheticTemplate(request.template)]
        )
        docs = []
        try:
            for i in range(request.count):
                scenario = generate_synthetic(
                    templates[i % len(templates)],
                    SyntheticParams(
                        seed=request.seed * 100_000 + i,
                        include_futures=request.include_futures,
                    ),
                )
                docs.append(scenario_to_dict(scenario))
        except GenerationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return GenerateResponse(scenarios=docs)

    @app.post("/scenarios/validate", response_model=ValidateResponse)
    def validate(request: ValidateRequest) -> ValidateResponse:
        try:
            parse_scenario(request.scenario)
        except ScenarioFormatError as exc:
            return ValidateResponse(valid=False, error=str(exc))
        return ValidateResponse(valid=True)

    @app.post("/rollouts/run", response_model=RolloutResponse)
    def rollout(request: RolloutRequest) -> RolloutResponse:
        try:
            scenario = parse_scenario(request.scenario)
            kind = PredictorKind(request.predictor)
        except (ScenarioFormatError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            result = run_closed_loop(
                scenario,
                kind,
                HeuristicRelationModel(),
                planner_config=PlannerConfig(),
                predictor_config=PredictorConfig(relation_threshold=request.relation_threshold),
                sim_config=SimConfig(
                    horizon_steps=request.horizon_steps,
                    seed=request.seed,
                    reactive=request.reactive,
                ),
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return RolloutResponse(
            outcome=outcome_to_dict(build_outcome(result)),
            termination=result.termination.kind,
            collisions=result.collisions,
        )

    @app.post("/experiments/run", response_model=ExperimentResponse)
    def experiment(request: ExperimentRequest) -> ExperimentResponse:
        try:
            config = RunConfig(
                predictors=tuple(request.predictors),
                synthetic_template=request.synthetic_template,
                synthetic_count=request.synthetic_count,
                relation_threshold=request.relation_threshold,
                seed=request.seed,
                horizon_steps=request.horizon_steps,
                workers=request.workers,
                reactive=request.reactive,
                relation_table_text=request.relation_table,
            )
            if request.scenarios is not None:
                scenarios = [parse_scenario(doc) for doc in request.scenarios]
            else:
                from ..experiment import gather_scenarios

                scenarios = gather_scenarios(config)
            results = run_on_scenarios(scenarios, config)
        except (ScenarioFormatError, GenerationError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        table = compare([results[name] for name in config.predictors])
        return ExperimentResponse(results=results, table=table)

    @app.post("/results/compare", response_model=CompareResponse)
    def compare_results(request: CompareRequest) -> CompareResponse:
        try:
            table = compare(request.results)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return CompareResponse(table=table)

    return app


app = create_app()
