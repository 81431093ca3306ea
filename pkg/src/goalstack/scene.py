"""World model: BEV grids, oriented boxes, synthetic scenarios and detection noise.

This module stands in for the camera + BEV-encoder stack: scenarios script
agent motion on constant-turn-rate-and-velocity arcs, `synth_bev_features`
paints class-conditioned feature signatures into a BEV grid so downstream
attention has real signal to find, and `corrupt_detections` turns ground
truth into noisy detection evidence for the tracker.

Everything here is pure and deterministic per seed; scenarios are immutable
after construction and serialize to a versioned JSON schema (schema = 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, require

SCHEMA_VERSION = 1

DEFAULT_EXTENT = (-51.2, 51.2, -51.2, 51.2)

# (width, length) metres per agent class
AGENT_DIMS = {
    "car": (2.0, 4.5),
    "truck": (2.5, 8.0),
    "pedestrian": (0.7, 0.7),
}

MAP_CLASSES = ("lanes", "dividers", "crossings", "drivable")

COMMANDS = ("left", "right", "forward")


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Box2d:
    """BEV oriented box: centre (x, y), width across / length along heading, yaw in rad."""

    x: float
    y: float
    w: float
    l: float
    yaw: float

    def __post_init__(self):
        require(self.w > 0 and self.l > 0, "bev-scene", "Box2d", "box dims must be positive")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def corners(self) -> np.ndarray:
        """Corner vertices (4, 2), counter-clockwise: FL, RL, RR, FR."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def contains(self, points: np.ndarray, eps: float = 1e-9) -> np.ndarray:
        """Half-open inclusion test in the box frame: [-l/2, l/2) x [-w/2, w/2).

        Half-open keeps adjacent boxes tiling the plane without double-counting
        boundary cell centres; the nanometre-scale eps snap makes boundary
        arithmetic reproducible for non-binary cell pitches like 0.512 m.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d = pts - np.array([self.x, self.y])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = d[:, 0] * c + d[:, 1] * s
        dy = -d[:, 0] * s + d[:, 1] * c
        return (
            (dx >= -self.l / 2 - eps) & (dx < self.l / 2 - eps) & (dy >= -self.w / 2 - eps) & (dy < self.w / 2 - eps)
        )


@dataclass
class BevGrid:
    """H x W (x C) raster over a metric BEV extent with world<->cell transforms.

    data[i, j] covers x in [x_min + i*cell, x_min + (i+1)*cell) and likewise for
    y with j; cell centres sit at integer fractional coordinates.
    """

    data: np.ndarray
    extent: tuple[float, float, float, float] = DEFAULT_EXTENT

    def __post_init__(self):
        self.data = np.asarray(self.data)
        require(self.data.ndim in (2, 3), "bev-scene", "BevGrid", "data must be HxW or HxWxC")
        require(self.data.shape[0] > 0 and self.data.shape[1] > 0, "bev-scene", "BevGrid", "empty grid")

    @classmethod
    def zeros(cls, h: int, w: int, channels: int = 0, extent=DEFAULT_EXTENT, dtype=float) -> "BevGrid":
        shape = (h, w) if channels == 0 else (h, w, channels)
        return cls(np.zeros(shape, dtype=dtype), tuple(extent))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 0 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def cell_size(self) -> tuple[float, float]:
        x_min, x_max, y_min, y_max = self.extent
        return (x_max - x_min) / self.h, (y_max - y_min) / self.w

    def world_to_cell(self, points: np.ndarray) -> np.ndarray:
        """World (x, y) -> fractional cell coords (i, j); affine, exact inverse of cell_to_world."""
        pts = np.asarray(points, dtype=float)
        cx, cy = self.cell_size
        x_min, _, y_min, _ = self.extent
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] - x_min) / cx - 0.5
        out[..., 1] = (pts[..., 1] - y_min) / cy - 0.5
        return out

    def cell_to_world(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells, dtype=float)
        cx, cy = self.cell_size
        x_min, _, y_min, _ = self.extent
        out = np.empty_like(cells)
        out[..., 0] = (cells[..., 0] + 0.5) * cx + x_min
        out[..., 1] = (cells[..., 1] + 0.5) * cy + y_min
        return out

    def cell_centers(self) -> np.ndarray:
        """World coordinates of every cell centre, shape (H, W, 2)."""
        ii, jj = np.meshgrid(np.arange(self.h), np.arange(self.w), indexing="ij")
        return self.cell_to_world(np.stack([ii, jj], axis=-1))


def rasterize_boxes(grid_spec: BevGrid | tuple, boxes: list[Box2d], ids: list[int]) -> BevGrid:
    """Rasterize boxes to an instance-id grid (0 = free); later id wins on overlap.

    A cell is labelled iff its centre lies inside the rotated box (half-open
    box-frame test, see Box2d.contains).
    """
    grid = _as_spec_grid(grid_spec, channels=0, dtype=np.int64)
    require(all(i > 0 for i in ids), "bev-scene", "rasterize_boxes", "ids must be positive")
    out = np.zeros((grid.h, grid.w), dtype=np.int64)
    cx, cy = grid.cell_size
    for box, bid in zip(boxes, ids):
        # bounding window of the rotated box in cell indices
        corners = grid.world_to_cell(box.corners())
        i0 = max(0, int(math.floor(corners[:, 0].min())) - 1)
        i1 = min(grid.h - 1, int(math.ceil(corners[:, 0].max())) + 1)
        j0 = max(0, int(math.floor(corners[:, 1].min())) - 1)
        j1 = min(grid.w - 1, int(math.ceil(corners[:, 1].max())) + 1)
        if i0 > i1 or j0 > j1:
            continue
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        centers = grid.cell_to_world(np.stack([ii, jj], axis=-1).reshape(-1, 2))
        inside = box.contains(centers).reshape(ii.shape)
        out[i0 : i1 + 1, j0 : j1 + 1][inside] = bid
    return BevGrid(out, grid.extent)


def _as_spec_grid(grid_spec, channels: int, dtype=float) -> BevGrid:
    if isinstance(grid_spec, BevGrid):
        return BevGrid.zeros(grid_spec.h, grid_spec.w, channels, grid_spec.extent, dtype)
    h, w, extent = grid_spec
    return BevGrid.zeros(h, w, channels, extent, dtype)


@dataclass
class AgentScript:
    """One scripted agent: per-frame box (or None when invalid)."""

    agent_id: int
    cls: str
    boxes: list  # list[Box2d | None], one per frame

    def valid_at(self, t: int) -> bool:
        return self.boxes[t] is not None


@dataclass
class MapLayers:
    lanes: list = field(default_factory=list)
    dividers: list = field(default_factory=list)
    crossings: list = field(default_factory=list)
    drivable: list = field(default_factory=list)

    def polylines(self, cls: str) -> list:
        return getattr(self, cls)


@dataclass
class Scenario:
    """Ground-truth world: agent scripts, map polylines, ego route, commands."""

    frame_rate: float
    horizon: int
    agents: list  # list[AgentScript]
    map: MapLayers
    ego: list  # list[Box2d]
    command: list  # list[str]

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        require(len(ids) == len(set(ids)), "bev-scene", "Scenario", "agent ids must be unique")
        require(len(self.ego) == self.horizon, "bev-scene", "Scenario", "ego route length != horizon")
        require(len(self.command) == self.horizon, "bev-scene", "Scenario", "command length != horizon")
        for a in self.agents:
            require(len(a.boxes) == self.horizon, "bev-scene", "Scenario", f"agent {a.agent_id} frames != horizon")
        require(all(c in COMMANDS for c in self.command), "bev-scene", "Scenario", "unknown command label")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def agent_boxes_at(self, t: int) -> tuple[list[Box2d], list[int], list[str]]:
        boxes, ids, classes = [], [], []
        for a in self.agents:
            if a.boxes[t] is not None:
                boxes.append(a.boxes[t])
                ids.append(a.agent_id)
                classes.append(a.cls)
        return boxes, ids, classes

    def future_track(self, agent_id: int, t: int, steps: int):
        """(steps, 2) future centre positions from t+1 on, or None if any step is invalid."""
        agent = next(a for a in self.agents if a.agent_id == agent_id)
        out = []
        for s in range(1, steps + 1):
            if t + s >= self.horizon or agent.boxes[t + s] is None:
                return None
            b = agent.boxes[t + s]
            out.append([b.x, b.y])
        return np.array(out)

    def ego_future(self, t: int, steps: int):
        """(k, 2) future ego positions, truncated at the horizon."""
        out = []
        for s in range(1, steps + 1):
            if t + s >= self.horizon:
                break
            out.append([self.ego[t + s].x, self.ego[t + s].y])
        return np.array(out) if out else np.zeros((0, 2))

    def to_dict(self) -> dict:
        def frame_dict(t, box, valid=None):
            d = {"t": t, "x": box.x, "y": box.y, "w": box.w, "l": box.l, "yaw": box.yaw}
            if valid is not None:
                d["valid"] = valid
            return d

        agents = []
        for a in self.agents:
            frames = []
            last = None
            for t, b in enumerate(a.boxes):
                if b is None:
                    # carry the last pose with valid=False so every frame is present
                    ref = last if last is not None else Box2d(0, 0, 1, 1, 0)
                    frames.append(frame_dict(t, ref, valid=False))
                else:
                    frames.append(frame_dict(t, b, valid=True))
                    last = b
            agents.append({"id": a.agent_id, "class": a.cls, "frames": frames})
        return {
            "schema": SCHEMA_VERSION,
            "frame_rate": self.frame_rate,
            "horizon": self.horizon,
            "agents": agents,
            "map": {cls: [np.asarray(p).tolist() for p in self.map.polylines(cls)] for cls in MAP_CLASSES},
            "ego": [frame_dict(t, b) for t, b in enumerate(self.ego)],
            "command": list(self.command),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported scenario schema {d.get('schema')!r}")
        agents = []
        for a in d["agents"]:
            boxes = []
            for f in sorted(a["frames"], key=lambda f: f["t"]):
                if f.get("valid", True):
                    boxes.append(Box2d(f["x"], f["y"], f["w"], f["l"], f["yaw"]))
                else:
                    boxes.append(None)
            agents.append(AgentScript(a["id"], a["class"], boxes))
        layers = MapLayers(**{k: [np.asarray(p, dtype=float) for p in d["map"].get(k, [])] for k in MAP_CLASSES})
        ego = [Box2d(f["x"], f["y"], f["w"], f["l"], f["yaw"]) for f in sorted(d["ego"], key=lambda f: f["t"])]
        return cls(d["frame_rate"], d["horizon"], agents, layers, ego, list(d["command"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GeneratorConfig:
    horizon: int = 20
    frame_rate: float = 2.0
    n_agents: int = 4
    speed_range: tuple[float, float] = (2.0, 8.0)
    turn_rate_range: tuple[float, float] = (-0.15, 0.15)
    ego_speed: float = 4.0
    ego_w: float = 1.85
    ego_l: float = 4.08
    spawn_radius: float = 35.0
    clearance: float = 1.0
    extent: tuple[float, float, float, float] = DEFAULT_EXTENT
    # forced obstacle placement: plant a stationary car on the ego path this
    # many seconds ahead (0 disables); used by planted-obstacle suites
    planted_obstacle_ahead_s: float = 0.0

    def validate(self):
        if self.horizon <= 0:
            raise ConfigError("scenario horizon must be positive")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")
        if self.n_agents < 0:
            raise ConfigError("n_agents must be >= 0")
        if not (self.speed_range[0] <= self.speed_range[1]):
            raise ConfigError("speed_range must be ordered")


def _ctrv_rollout(x, y, yaw, speed, turn_rate, dt, steps):
    """Constant-turn-rate-and-velocity arc; returns (steps, 3) of (x, y, yaw)."""
    out = np.empty((steps, 3))
    for t in range(steps):
        out[t] = (x, y, yaw)
        if abs(turn_rate) < 1e-9:
            x += speed * dt * math.cos(yaw)
            y += speed * dt * math.sin(yaw)
        else:
            x += speed / turn_rate * (math.sin(yaw + turn_rate * dt) - math.sin(yaw))
            y += speed / turn_rate * (-math.cos(yaw + turn_rate * dt) + math.cos(yaw))
            yaw = yaw + turn_rate * dt
    return out


def generate_scenario(spec: GeneratorConfig, seed: int) -> Scenario:
    """Deterministic synthetic scenario: CTRV agents around an ego route.

    The ego drives piecewise constant-turn segments; per-frame command labels
    derive from the segment turn rate. Agents are resampled until they keep a
    conservative circular clearance from the ego at every frame, so ground
    truth is collision-free by construction.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    dt = 1.0 / spec.frame_rate

    # ego: 2-4 segments of {straight, left, right}
    n_seg = int(rng.integers(2, 5))
    seg_len = _split_lengths(spec.horizon, n_seg, rng)
    turn_mag = 0.12
    ego_states = []
    x, y, yaw = 0.0, 0.0, 0.0
    command = []
    for length in seg_len:
        omega = float(rng.choice([0.0, turn_mag, -turn_mag], p=[0.6, 0.2, 0.2]))
        roll = _ctrv_rollout(x, y, yaw, spec.ego_speed, omega, dt, length)
        ego_states.append(roll)
        last = roll[-1]
        if abs(omega) < 1e-9:
            x, y, yaw = last[0] + spec.ego_speed * dt * math.cos(last[2]), last[1] + spec.ego_speed * dt * math.sin(last[2]), last[2]
        else:
            x = last[0] + spec.ego_speed / omega * (math.sin(last[2] + omega * dt) - math.sin(last[2]))
            y = last[1] + spec.ego_speed / omega * (-math.cos(last[2] + omega * dt) + math.cos(last[2]))
            yaw = last[2] + omega * dt
        label = "forward" if abs(omega) < 0.02 else ("left" if omega > 0 else "right")
        command.extend([label] * length)
    ego_track = np.concatenate(ego_states, axis=0)
    ego = [Box2d(s[0], s[1], spec.ego_w, spec.ego_l, s[2]) for s in ego_track]

    ego_diag = math.hypot(spec.ego_w, spec.ego_l) / 2.0

    agents = []
    next_id = 1
    for _ in range(spec.n_agents):
        for _attempt in range(20):
            cls = str(rng.choice(list(AGENT_DIMS), p=[0.6, 0.15, 0.25]))
            w, l = AGENT_DIMS[cls]
            r = float(rng.uniform(min(8.0, 0.5 * spec.spawn_radius), spec.spawn_radius))
            ang = float(rng.uniform(-math.pi, math.pi))
            ax, ay = r * math.cos(ang), r * math.sin(ang)
            ayaw = float(rng.uniform(-math.pi, math.pi))
            # pedestrians stay below ~0.45 m per frame at 2 Hz so their 0.7 m
            # boxes keep frame-to-frame overlap (geometric matching needs it)
            speed = float(rng.uniform(*spec.speed_range)) if cls != "pedestrian" else float(rng.uniform(0.3, 0.9))
            omega = float(rng.uniform(*spec.turn_rate_range))
            roll = _ctrv_rollout(ax, ay, ayaw, speed, omega, dt, spec.horizon)
            a_diag = math.hypot(w, l) / 2.0
            min_dist = a_diag + ego_diag + spec.clearance
            d = np.hypot(roll[:, 0] - ego_track[:, 0], roll[:, 1] - ego_track[:, 1])
            if d.min() < min_dist:
                continue
            boxes = []
            x_min, x_max, y_min, y_max = spec.extent
            for s in roll:
                inside = x_min < s[0] < x_max and y_min < s[1] < y_max
                boxes.append(Box2d(s[0], s[1], w, l, s[2]) if inside else None)
            agents.append(AgentScript(next_id, cls, boxes))
            next_id += 1
            break

    if spec.planted_obstacle_ahead_s > 0:
        # stationary car centred on the ego's future position: guaranteed on-path
        k = min(spec.horizon - 1, int(round(spec.planted_obstacle_ahead_s * spec.frame_rate)))
        target = ego_track[k]
        w, l = AGENT_DIMS["car"]
        box = Box2d(target[0], target[1], w, l, target[2])
        agents.append(AgentScript(next_id, "car", [box] * spec.horizon))

    lanes, dividers, crossings, drivable = _map_around_route(ego_track, rng)
    layers = MapLayers(lanes=lanes, dividers=dividers, crossings=crossings, drivable=drivable)
    return Scenario(spec.frame_rate, spec.horizon, agents, layers, ego, command)


def _split_lengths(total: int, parts: int, rng) -> list[int]:
    cuts = sorted(rng.choice(np.arange(1, total), size=min(parts - 1, total - 1), replace=False).tolist()) if total > 1 and parts > 1 else []
    bounds = [0] + cuts + [total]
    return [b - a for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_around_route(route: np.ndarray, rng) -> tuple[list, list, list, list]:
    pts = route[:, :2]
    yaws = route[:, 2]
    normals = np.stack([-np.sin(yaws), np.cos(yaws)], axis=1)
    lanes = [pts + 1.75 * normals, pts - 1.75 * normals]
    dividers = [pts.copy()]
    # one or two crossings transverse to the route
    crossings = []
    for _ in range(int(rng.integers(1, 3))):
        k = int(rng.integers(0, len(pts)))
        n = normals[k]
        crossings.append(np.stack([pts[k] - 4.0 * n, pts[k] + 4.0 * n]))
    lo = pts.min(axis=0) - 6.0
    hi = pts.max(axis=0) + 6.0
    drivable = [np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]], [lo[0], lo[1]]])]
    return lanes, dividers, crossings, drivable


@dataclass(frozen=True)
class SynthFeatureConfig:
    amplitude: float = 3.0
    noise_std: float = 0.1


def class_signature(seed: int, name: str, channels: int) -> np.ndarray:
    """Stable unit signature vector for an agent or map class under a synth seed."""
    tag = int.from_bytes(name.encode(), "little") % (2**32)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xFEA7, tag)))
    v = rng.standard_normal(channels)
    return v / np.linalg.norm(v)


def synth_bev_features(
    scenario: Scenario,
    frame: int,
    grid_spec: BevGrid | tuple,
    seed: int,
    cfg: SynthFeatureConfig = SynthFeatureConfig(),
    channels: int = 256,
) -> BevGrid:
    """Synthetic BEV feature grid: seeded noise plus class signatures on occupied cells."""
    require(0 <= frame < scenario.horizon, "bev-scene", "synth_bev_features", "frame outside horizon")
    grid = _as_spec_grid(grid_spec, channels)
    noise_rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xB0E, frame)))
    data = noise_rng.standard_normal(grid.data.shape) * cfg.noise_std

    boxes, ids, classes = scenario.agent_boxes_at(frame)
    if boxes:
        inst = rasterize_boxes(grid, boxes, ids).data
        for box_id, cls in zip(ids, classes):
            mask = inst == box_id
            if mask.any():
                data[mask] += cfg.amplitude * class_signature(seed, cls, channels)
    # ego signature too: the ego is part of the scene
    ego_inst = rasterize_boxes(grid, [scenario.ego[frame]], [1]).data
    data[ego_inst == 1] += cfg.amplitude * class_signature(seed, "ego", channels)

    for cls in MAP_CLASSES:
        sig = cfg.amplitude * 0.5 * class_signature(seed, cls, channels)
        for poly in scenario.map.polylines(cls):
            for i, j in _polyline_cells(grid, np.asarray(poly)):
                data[i, j] += sig
    return BevGrid(data, grid.extent)


def rasterize_polylines(grid_spec: BevGrid | tuple, polylines: list) -> BevGrid:
    """Binary grid of cells touched by any of the polylines."""
    grid = _as_spec_grid(grid_spec, channels=0, dtype=np.int64)
    out = np.zeros((grid.h, grid.w), dtype=np.int64)
    for poly in polylines:
        for i, j in _polyline_cells(grid, np.asarray(poly, dtype=float)):
            out[i, j] = 1
    return BevGrid(out, grid.extent)


def _polyline_cells(grid: BevGrid, poly: np.ndarray) -> list:
    """Cells touched by a polyline (sampled at half-cell spacing); deduplicated, ordered."""
    if len(poly) == 0:
        return []
    step = min(grid.cell_size) / 2.0
    samples = [poly[0]]
    for a, b in zip(poly[:-1], poly[1:]):
        seg = np.asarray(b) - np.asarray(a)
        n = max(1, int(math.ceil(np.linalg.norm(seg) / step)))
        for k in range(1, n + 1):
            samples.append(np.asarray(a) + seg * (k / n))
    cells = grid.world_to_cell(np.array(samples))
    idx = np.rint(cells).astype(int)
    seen, out = set(), []
    for i, j in idx:
        if 0 <= i < grid.h and 0 <= j < grid.w and (i, j) not in seen:
            seen.add((i, j))
            out.append((i, j))
    return out


@dataclass(frozen=True)
class NoiseSpec:
    pos_std: float = 0.0
    yaw_std: float = 0.0
    drop_prob: float = 0.0
    fp_prob: float = 0.0
    fp_candidates: int = 3
    score_std: float = 0.0

    def validate(self):
        if self.pos_std < 0 or self.yaw_std < 0 or self.score_std < 0:
            raise ConfigError("noise stds must be >= 0")
        if not (0 <= self.drop_prob <= 1 and 0 <= self.fp_prob <= 1):
            raise ConfigError("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class Detection:
    box: Box2d
    score: float
    cls: str
    feature_seed: int


@dataclass(frozen=True)
class DetectionFrame:
    """Noisy detection evidence plus the ego ground-truth pose channel."""

    t: int
    detections: tuple
    ego_box: Box2d


def corrupt_detections(scenario: Scenario, frame: int, noise: NoiseSpec, seed: int) -> DetectionFrame:
    """Jitter, drop and hallucinate detections; deterministic per seed."""
    noise.validate()
    require(0 <= frame < scenario.horizon, "bev-scene", "corrupt_detections", "frame outside horizon")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xDE7, frame)))
    dets = []
    boxes, ids, classes = scenario.agent_boxes_at(frame)
    for box, bid, cls in zip(boxes, ids, classes):
        if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
            continue
        dx, dy = rng.normal(0.0, noise.pos_std, size=2) if noise.pos_std > 0 else (0.0, 0.0)
        dyaw = rng.normal(0.0, noise.yaw_std) if noise.yaw_std > 0 else 0.0
        score = 1.0
        if noise.score_std > 0:
            score = float(np.clip(1.0 - abs(rng.normal(0.0, noise.score_std)), 0.0, 1.0))
        jittered = Box2d(box.x + dx, box.y + dy, box.w, box.l, box.yaw + dyaw)
        dets.append(Detection(jittered, score, cls, int(rng.integers(0, 2**31 - 1))))
    ego = scenario.ego[frame]
    for _ in range(noise.fp_candidates):
        if noise.fp_prob > 0 and rng.random() < noise.fp_prob:
            w, l = AGENT_DIMS["car"]
            fp = Box2d(
                ego.x + float(rng.uniform(-15.0, 15.0)),
                ego.y + float(rng.uniform(-15.0, 15.0)),
                w,
                l,
                float(rng.uniform(-math.pi, math.pi)),
            )
            dets.append(Detection(fp, float(rng.uniform(0.4, 0.9)), "car", int(rng.integers(0, 2**31 - 1))))
    return DetectionFrame(frame, tuple(dets), scenario.ego[frame])
