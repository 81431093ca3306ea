"""FastAPI service wrapping the pipeline.

Config errors surface as 422, contract violations as 500 with a module tag;
the CLI maps those onto its exit codes. Scenario files are read server-side
(shared filesystem deployment); configs travel inline.
"""

from __future__ import annotations

import glob as globlib
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import PipelineConfig, config_from_dict, config_to_dict
from ..errors import ConfigError, ContractViolation
from ..pipeline import eval_suite, noise_sweep, run_pipeline
from ..scene import GeneratorConfig, Scenario, generate_scenario
from ..smoother import SmootherProblem, smooth_detailed
from . import schemas

app = FastAPI(title="goalstack", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(request, exc: ConfigError):
    return JSONResponse(status_code=422, content={"error": "config", "detail": str(exc)})


@app.exception_handler(ContractViolation)
async def _contract_error(request, exc: ContractViolation):
    return JSONResponse(
        status_code=500,
        content={"error": "contract", "detail": str(exc), "module": exc.module, "op": exc.op},
    )


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.get("/config/default")
def default_config() -> dict:
    return config_to_dict(PipelineConfig())


@app.get("/config/smoke")
def smoke_config() -> dict:
    return config_to_dict(_load_smoke_config())


def _load_smoke_config() -> PipelineConfig:
    import json
    from importlib import resources

    text = (resources.files("goalstack") / "data" / "smoke_config.json").read_text()
    return config_from_dict(json.loads(text))


def _load_smoke_scenario() -> Scenario:
    from importlib import resources

    return Scenario.from_json((resources.files("goalstack") / "data" / "smoke_scenario.json").read_text())


def _resolve_config(config: dict | None, seed: int | None) -> PipelineConfig:
    cfg = _load_smoke_config() if config is None else config_from_dict(config)
    if seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=int(seed))
    return cfg.validate()


@app.post("/scenarios/generate", response_model=schemas.GenerateResponse)
def generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
    spec = GeneratorConfig(
        horizon=req.horizon,
        frame_rate=req.frame_rate,
        n_agents=req.n_agents,
        speed_range=(req.speed_min, req.speed_max),
        ego_speed=req.ego_speed,
        spawn_radius=req.spawn_radius,
        extent=(-req.half_extent, req.half_extent, -req.half_extent, req.half_extent),
        planted_obstacle_ahead_s=req.planted_obstacle_ahead_s,
    )
    scenario = generate_scenario(spec, req.seed)
    path = None
    if req.out_path:
        Path(req.out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(req.out_path).write_text(scenario.to_json())
        path = req.out_path
    return schemas.GenerateResponse(
        path=path,
        scenario=scenario.to_dict() if req.include_scenario else None,
        agents=len(scenario.agents),
        horizon=scenario.horizon,
    )


def _load_scenario(req_scenario: dict | None, req_path: str | None) -> Scenario:
    if req_scenario is not None:
        return Scenario.from_dict(req_scenario)
    if req_path is not None:
        try:
            return Scenario.from_json(Path(req_path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"scenario file not found: {req_path}") from e
    return _load_smoke_scenario()


@app.post("/runs", response_model=schemas.RunResponse)
def run(req: schemas.RunRequest) -> schemas.RunResponse:
    cfg = _resolve_config(req.config, req.seed)
    scenario = _load_scenario(req.scenario, req.scenario_path)
    manifest, acc = run_pipeline(cfg, scenario, req.out_dir, scenario_id=req.scenario_id)
    report = acc.report(
        ego_w=cfg.plan.ego_w,
        ego_l=cfg.plan.ego_l,
        frame_rate=scenario.frame_rate,
        recall_grid=cfg.metrics.recall_grid,
        match_dist=cfg.metrics.track_match_dist,
    )
    return schemas.RunResponse(manifest=manifest.to_dict(), metrics=report.to_dict())


@app.post("/eval", response_model=schemas.EvalResponse)
def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
    cfg = _resolve_config(req.config, req.seed)
    paths = list(req.scenario_paths)
    if req.scenarios_glob:
        paths.extend(sorted(globlib.glob(req.scenarios_glob)))
    if not paths:
        raise ConfigError("no scenarios given: pass scenario_paths or scenarios_glob")
    scenarios = []
    for p in paths:
        try:
            scenarios.append((Path(p).stem, Scenario.from_json(Path(p).read_text())))
        except FileNotFoundError as e:
            raise ConfigError(f"scenario file not found: {p}") from e
    report, _ = eval_suite(cfg, scenarios, req.out_dir)
    sweep_rows: list = []
    if req.noise_sweep:
        sweep_rows = [list(map(float, row)) for row in noise_sweep(cfg, scenarios, Path(req.out_dir) / "sweep", req.noise_sweep)]
    return schemas.EvalResponse(
        report=report.to_dict(),
        scenario_ids=[sid for sid, _ in scenarios],
        out_dir=req.out_dir,
        noise_sweep=sweep_rows,
    )


@app.post("/smooth", response_model=schemas.SmoothResponse)
def smooth_endpoint(req: schemas.SmoothRequest) -> schemas.SmoothResponse:
    target = np.asarray(req.target, dtype=float)
    if target.ndim != 2 or target.shape[1] != 2 or target.shape[0] < 4:
        raise ConfigError("target must be a list of at least 4 [x, y] points")
    phi = np.full(5, 0.1) if req.phi_weights is None else np.asarray(req.phi_weights, dtype=float)
    if phi.shape != (5,):
        raise ConfigError("phi_weights must have exactly 5 entries")
    problem = SmootherProblem(target=target, dt=req.dt, lam_xy=req.lam_xy, lam_goal=req.lam_goal, phi_weights=phi)
    res = smooth_detailed(problem)
    return schemas.SmoothResponse(
        trajectory=res.trajectory.tolist(),
        cost_before=res.cost_before,
        cost_after=res.cost_after,
        iterations=res.iterations,
    )
