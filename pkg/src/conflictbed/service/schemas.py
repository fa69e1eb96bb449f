"""Pydantic request/response models for the evaluation service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    template: str
    count: int = Field(default=1, ge=1)
    seed: int = 0
    include_futures: bool = False


class GenerateResponse(BaseModel):
    scenarios: list[dict]


class ValidateRequest(BaseModel):
    scenario: dict


class ValidateResponse(BaseModel):
    valid: bool
    error: str | None = None


class RolloutRequest(BaseModel):
    scenario: dict
    predictor: str
    seed: int = 0
    relation_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    horizon_steps: int = Field(default=80, ge=1)
    reactive: bool = True


class RolloutResponse(BaseModel):
    outcome: dict
    termination: str
    collisions: list[tuple[int, int]]


class ExperimentRequest(BaseModel):
    predictors: list[str]
    scenarios: list[dict] | None = None
    synthetic_template: str | None = None
    synthetic_count: int = 0
    relation_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = 0
    horizon_steps: int = Field(default=80, ge=1)
    workers: int = Field(default=1, ge=1)
    reactive: bool = True
    relation_table: str | None = None


class ExperimentResponse(BaseModel):
    results: dict[str, dict]
    table: str


class CompareRequest(BaseModel):
    results: list[dict]


class CompareResponse(BaseModel):
    table: str
