"""Pipeline configuration: module sizes, thresholds, seeds, and file plumbing.

Defaults follow the reference sizing (D = 256, 200x200 BEV at 0.512 m, layer
counts 6/6/3/5/3, K = 6 modes over T = 12 steps, T_o = 5 occupancy blocks,
T_p = 6 plan steps). Everything scales down consistently for test configs; the
validator enforces the cross-module constraints (D divisible by heads and 4,
grid divisible by 8, matching horizons).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class GridConfig:
    h: int = 200
    w: int = 200
    half_extent: float = 51.2

    @property
    def extent(self) -> tuple:
        return (-self.half_extent, self.half_extent, -self.half_extent, self.half_extent)


@dataclass(frozen=True)
class NoiseConfig:
    pos_std: float = 0.0
    yaw_std: float = 0.0
    drop_prob: float = 0.0
    fp_prob: float = 0.0
    fp_candidates: int = 3
    score_std: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    amplitude: float = 3.0
    noise_std: float = 0.1


@dataclass(frozen=True)
class TrackerConfig:
    layers: int = 6
    spawn_threshold: float = 0.4
    keep_threshold: float = 0.35
    patience_s: float = 2.0
    iou_gate: float = 0.1


@dataclass(frozen=True)
class MapConfig:
    layers: int = 6
    n_things: int = 300
    mask_threshold: float = 0.5


@dataclass(frozen=True)
class MotionConfig:
    layers: int = 3
    modes: int = 6
    horizon: int = 12
    deform_points: int = 4


@dataclass(frozen=True)
class OccConfig:
    blocks: int = 5
    merge_threshold: float = 0.5


@dataclass(frozen=True)
class PlanConfig:
    layers: int = 3
    horizon: int = 6
    sigma: float = 1.0
    gate: float = 5.0
    lam_coord: float = 1.0
    lam_obs: float = 5.0
    ego_w: float = 1.85
    ego_l: float = 4.08
    collision_pairs: tuple = ((1.0, 0.0), (0.4, 0.5), (0.1, 1.0))


@dataclass(frozen=True)
class SmootherConfig:
    enabled: bool = True
    lam_xy: float = 1.0
    lam_goal: float = 1.0
    phi_weight: float = 0.1
    segment_len: int = 4
    continuity_weight: float = 1e3


@dataclass(frozen=True)
class MetricsConfig:
    recall_grid: int = 40
    track_match_dist: float = 2.0
    motion_match_dist: float = 1.0
    miss_threshold: float = 2.0
    epa_fp_coef: float = 0.5
    vpq_iou: float = 0.5
    near_half_extent: float = 15.0
    far_half_extent: float = 50.0


@dataclass(frozen=True)
class PipelineConfig:
    dim: int = 256
    heads: int = 8
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    map: MapConfig = field(default_factory=MapConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    occ: OccConfig = field(default_factory=OccConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    write_occupancy_f32: bool = False

    def validate(self) -> "PipelineConfig":
        if self.dim <= 0 or self.dim % 4 != 0:
            raise ConfigError("dim must be positive and divisible by 4 (positional encoding)")
        if self.heads <= 0 or self.dim % self.heads != 0:
            raise ConfigError("dim must divide by head count")
        if self.grid.h <= 0 or self.grid.w <= 0 or self.grid.h % 8 or self.grid.w % 8:
            raise ConfigError("grid size must be positive and divisible by 8 (occupancy scales)")
        if self.grid.half_extent <= 0:
            raise ConfigError("grid half_extent must be positive")
        for name, val in (("tracker.spawn_threshold", self.tracker.spawn_threshold), ("tracker.keep_threshold", self.tracker.keep_threshold)):
            if not 0.0 <= val <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.tracker.patience_s <= 0:
            raise ConfigError("tracker.patience_s must be positive")
        if self.map.n_things <= 0 or self.map.layers < 0:
            raise ConfigError("map config must have positive query count and nonnegative layers")
        if self.motion.modes <= 0 or self.motion.horizon <= 0 or self.motion.layers <= 0:
            raise ConfigError("motion config must be positive")
        if self.occ.blocks <= 0:
            raise ConfigError("occ.blocks must be positive")
        if self.plan.horizon <= 0 or self.plan.sigma <= 0 or self.plan.gate <= 0:
            raise ConfigError("plan config must be positive")
        return self

    def patience_frames(self, frame_rate: float) -> int:
        import math

        return max(1, math.ceil(self.tracker.patience_s * frame_rate))


_NESTED = {
    "grid": GridConfig,
    "noise": NoiseConfig,
    "synth": SynthConfig,
    "tracker": TrackerConfig,
    "map": MapConfig,
    "motion": MotionConfig,
    "occ": OccConfig,
    "plan": PlanConfig,
    "smoother": SmootherConfig,
    "metrics": MetricsConfig,
}


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    kwargs: dict = {}
    valid = {f.name for f in fields(PipelineConfig)}
    for key, value in d.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _NESTED:
            cls = _NESTED[key]
            sub_valid = {f.name for f in fields(cls)}
            unknown = set(value) - sub_valid
            if unknown:
                raise ConfigError(f"unknown keys in config.{key}: {sorted(unknown)}")
            if key == "plan" and "collision_pairs" in value:
                value = dict(value, collision_pairs=tuple(tuple(p) for p in value["collision_pairs"]))
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    try:
        return PipelineConfig(**kwargs).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from e


def config_to_dict(config: PipelineConfig) -> dict:
    def convert(x):
        if is_dataclass(x):
            return {k: convert(v) for k, v in asdict(x).items()}
        if isinstance(x, tuple):
            return [convert(v) for v in x]
        if isinstance(x, dict):
            return {k: convert(v) for k, v in x.items()}
        return x

    return convert(config)


def config_hash(config: PipelineConfig) -> str:
    """Stable digest; key order in the source JSON never matters."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        try:
            return config_from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
