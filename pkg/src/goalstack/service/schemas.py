"""Pydantic request/response models for the service API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    seed: int = 0
    horizon: int = 20
    n_agents: int = 4
    frame_rate: float = 2.0
    ego_speed: float = 4.0
    speed_min: float = 2.0
    speed_max: float = 8.0
    spawn_radius: float = 35.0
    half_extent: float = 51.2
    planted_obstacle_ahead_s: float = 0.0
    out_path: str | None = None
    include_scenario: bool = True


class GenerateResponse(BaseModel):
    path: str | None = None
    scenario: dict | None = None
    agents: int
    horizon: int


class RunRequest(BaseModel):
    out_dir: str
    config: dict | None = None
    seed: int | None = None
    scenario: dict | None = None
    scenario_path: str | None = None
    scenario_id: str = "scenario"


class RunResponse(BaseModel):
    manifest: dict
    metrics: dict


class EvalRequest(BaseModel):
    out_dir: str
    config: dict | None = None
    seed: int | None = None
    scenario_paths: list[str] = Field(default_factory=list)
    scenarios_glob: str | None = None
    noise_sweep: list[float] = Field(default_factory=list)


class EvalResponse(BaseModel):
    report: dict
    scenario_ids: list[str]
    out_dir: str
    noise_sweep: list[list[float]] = Field(default_factory=list)


class SmoothRequest(BaseModel):
    target: list[list[float]]
    dt: float = 0.5
    lam_xy: float = 1.0
    lam_goal: float = 1.0
    phi_weights: list[float] | None = None


class SmoothResponse(BaseModel):
    trajectory: list[list[float]]
    cost_before: float
    cost_after: float
    iterations: int


class ErrorBody(BaseModel):
    error: str
    detail: str
