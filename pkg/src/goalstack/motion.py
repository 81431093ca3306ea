"""Scene-centric multimodal motion forecasting.

Anchors come from k-means over future-endpoint statistics (committed fixture);
per agent they are rotated/translated into the scene frame. Each decoder layer
runs three interactions on the motion queries - agent-agent, agent-map and
agent-goal (deformable attention on the BEV near the previous layer's goal
point) - fuses them with an MLP, and decodes Gaussian-mixture trajectory
parameters plus modal scores, coarse-to-fine across layers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError, require
from .kernels import (
    DecoderBlockParams,
    DeformParams,
    MlpParams,
    decoder_block,
    deform_attn,
    mlp_forward,
    sinusoidal_pe,
    softmax,
)
from .scene import BevGrid, GeneratorConfig, generate_scenario
from .tracker import TrackState

ANCHOR_FIXTURE = "anchor_endpoints.json"


def kmeans_anchors(endpoints: np.ndarray, k: int, seed: int, tol: float = 1e-6, max_iters: int = 100, return_history: bool = False):
    """Lloyd's k-means with k-means++ init; centroid shift < tol stops iteration."""
    pts = np.asarray(endpoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ConfigError("endpoints must be n x 2")
    n = pts.shape[0]
    if n < k:
        raise ConfigError(f"need at least k={k} endpoints, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))

    centroids = np.empty((k, 2))
    centroids[0] = pts[rng.integers(n)]
    for i in range(1, k):
        d2 = np.min(((pts[:, None, :] - centroids[None, :i, :]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total > 0:
            centroids[i] = pts[rng.choice(n, p=d2 / total)]
        else:
            centroids[i] = pts[rng.integers(n)]

    history = []
    for _ in range(max_iters):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), assign].sum()))
        new = centroids.copy()
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                new[c] = members.mean(axis=0)
        shift = float(np.linalg.norm(new - centroids, axis=1).max())
        centroids = new
        if shift < tol:
            break
    if return_history:
        return centroids, history
    return centroids


def kmeans_sse(points: np.ndarray, centroids: np.ndarray) -> float:
    d2 = ((np.asarray(points)[:, None, :] - np.asarray(centroids)[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).sum())


def harvest_anchor_endpoints(n_scenarios: int = 32, seed: int = 2024, horizon_steps: int = 12) -> np.ndarray:
    """Agent-frame future endpoints collected from seeded generator scenarios."""
    spec = GeneratorConfig(horizon=horizon_steps + 8, n_agents=5)
    out = []
    for s in range(n_scenarios):
        sc = generate_scenario(spec, seed + s)
        for agent in sc.agents:
            for t in range(sc.horizon - horizon_steps):
                if agent.boxes[t] is None or agent.boxes[t + horizon_steps] is None:
                    continue
                b0, bT = agent.boxes[t], agent.boxes[t + horizon_steps]
                dx, dy = bT.x - b0.x, bT.y - b0.y
                c, si = math.cos(-b0.yaw), math.sin(-b0.yaw)
                out.append([dx * c - dy * si, dx * si + dy * c])
    return np.array(out)


def load_anchor_endpoints() -> np.ndarray:
    text = (resources.files("goalstack") / "data" / ANCHOR_FIXTURE).read_text()
    return np.array(json.loads(text)["endpoints"])


@dataclass(frozen=True)
class AnchorSet:
    """Agent-level anchors (K, T, 2) and their per-agent scene-frame copies (N_a, K, T, 2)."""

    agent_level: np.ndarray
    scene_level: np.ndarray

    @property
    def endpoints_agent(self) -> np.ndarray:
        return self.agent_level[:, -1, :]

    @property
    def endpoints_scene(self) -> np.ndarray:
        return self.scene_level[:, :, -1, :]


def build_anchor_set(endpoint_centroids: np.ndarray, horizon: int, agent_poses: np.ndarray) -> AnchorSet:
    """Expand endpoint centroids to straight-line anchors and place them per agent.

    agent_poses is (N_a, 3) of (x, y, yaw); scene-level anchors are the
    agent-level ones rotated by yaw and translated to the agent position.
    """
    k = endpoint_centroids.shape[0]
    steps = (np.arange(1, horizon + 1) / horizon)[None, :, None]
    agent_level = endpoint_centroids[:, None, :] * steps  # (K, T, 2)
    yaws = agent_poses[:, 2]
    c, s = np.cos(yaws), np.sin(yaws)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (N_a, 2, 2)
    scene = np.einsum("aij,ktj->akti", rot, agent_level) + agent_poses[:, None, None, :2]
    return AnchorSet(agent_level=agent_level, scene_level=scene)


@dataclass(frozen=True)
class QposMlps:
    scene_anchor: MlpParams
    agent_anchor: MlpParams
    current: MlpParams
    goal: MlpParams


def build_qpos(anchors: AnchorSet, current: np.ndarray, prev_goal: np.ndarray, mlps: QposMlps) -> np.ndarray:
    """Positional query from the four positional sources, (N_a * K, D)."""
    n_a, k = anchors.scene_level.shape[:2]
    require(current.shape == (n_a, 2), "motion-former", "build_qpos", "current positions must be N_a x 2")
    require(prev_goal.shape == (n_a, k, 2), "motion-former", "build_qpos", "prev_goal must be N_a x K x 2")
    dim = mlps.scene_anchor.out_dim

    def enc(points: np.ndarray, mlp: MlpParams) -> np.ndarray:
        return mlp_forward(sinusoidal_pe(points.reshape(-1, 2), dim), mlp)

    q = enc(anchors.endpoints_scene, mlps.scene_anchor)
    q = q + np.tile(enc(anchors.endpoints_agent, mlps.agent_anchor), (n_a, 1))
    q = q + np.repeat(enc(current, mlps.current), k, axis=0)
    q = q + enc(prev_goal, mlps.goal)
    return q


@dataclass(frozen=True)
class MotionLayerParams:
    agent_block: DecoderBlockParams
    map_block: DecoderBlockParams
    goal_deform: DeformParams
    fuse: MlpParams  # 3D -> D
    traj_head: MlpParams  # D -> T*5
    score_head: MlpParams  # D -> 1


@dataclass(frozen=True)
class MotionParams:
    dim: int
    modes: int
    horizon: int
    anchor_centroids: np.ndarray  # (K, 2)
    ctx_init: np.ndarray  # (K, D) per-modality context seed
    qpos_mlps: QposMlps
    kv_pos_proj: MlpParams  # PE of agent positions added to Q_A keys
    layers: tuple  # MotionLayerParams

    @classmethod
    def seeded(cls, dim: int, heads: int, layers: int, modes: int, horizon: int, seed: int, anchor_centroids: np.ndarray | None = None, deform_points: int = 4) -> "MotionParams":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
        if anchor_centroids is None:
            anchor_centroids = kmeans_anchors(load_anchor_endpoints(), modes, seed=7)
        require(anchor_centroids.shape == (modes, 2), "motion-former", "MotionParams", "anchor centroids must be K x 2")
        mk = lambda dims: MlpParams.seeded(dims, rng)
        return cls(
            dim=dim,
            modes=modes,
            horizon=horizon,
            anchor_centroids=np.asarray(anchor_centroids, dtype=float),
            ctx_init=rng.standard_normal((modes, dim)) * 0.02,
            qpos_mlps=QposMlps(mk([dim, dim]), mk([dim, dim]), mk([dim, dim]), mk([dim, dim])),
            kv_pos_proj=mk([dim, dim]),
            layers=tuple(
                MotionLayerParams(
                    agent_block=DecoderBlockParams.seeded(dim, heads, rng),
                    map_block=DecoderBlockParams.seeded(dim, heads, rng),
                    goal_deform=DeformParams.seeded(dim, dim, deform_points, rng),
                    fuse=mk([3 * dim, dim]),
                    traj_head=mk([dim, dim, horizon * 5]),
                    score_head=mk([dim, dim, 1]),
                )
                for _ in range(layers)
            ),
        )


@dataclass
class TrajectorySet:
    """Per-agent K-modal forecasts; absolute scene-frame positions in channels 0:2."""

    params: np.ndarray  # (N_a, K, T, 5)
    scores: np.ndarray  # (N_a, K), softmax rows

    @property
    def positions(self) -> np.ndarray:
        return self.params[..., :2]

    def velocities(self, current: np.ndarray) -> np.ndarray:
        """Per-step velocities whose cumulative sum reproduces positions exactly."""
        first = self.positions[:, :, :1, :] - current[:, None, None, :]
        rest = np.diff(self.positions, axis=2)
        return np.concatenate([first, rest], axis=2)


@dataclass
class MotionOutput:
    trajectories: TrajectorySet
    agent_ids: list
    current: np.ndarray  # (N_a, 2) agent positions at the forecast frame
    q_x: np.ndarray  # (N_a, D) modality-max-pooled final query context
    p_a: np.ndarray  # (N_a, D) position embedding of current agent locations
    ego_ctx: np.ndarray  # (K, D) final context rows of the ego agent


def motion_layer(
    ctx: np.ndarray,
    qpos: np.ndarray,
    agent_kv: np.ndarray,
    map_kv: np.ndarray | None,
    bev: BevGrid,
    prev_goal: np.ndarray,
    current: np.ndarray,
    layer: MotionLayerParams,
    modes: int,
    horizon: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One interaction layer; returns (new ctx, positions (N_a,K,T,2), spreads)."""
    n_rows = ctx.shape[0]
    n_a = n_rows // modes
    q = ctx + qpos
    q_a = decoder_block(q, agent_kv, layer.agent_block)
    q_m = decoder_block(q, map_kv, layer.map_block)
    q_g = deform_attn(q, prev_goal.reshape(-1, 2), bev, layer.goal_deform)
    fused = mlp_forward(np.concatenate([q_a, q_m, q_g], axis=1), layer.fuse)

    raw = mlp_forward(fused, layer.traj_head).reshape(n_a, modes, horizon, 5)
    positions = current[:, None, None, :] + np.cumsum(raw[..., :2], axis=2)
    return fused, positions, raw[..., 2:]


def forecast(tracks: TrackState, map_queries, bev: BevGrid, params: MotionParams) -> MotionOutput:
    """Full coarse-to-fine forecast over ego + live tracks."""
    require(tracks.ego_track is not None, "motion-former", "forecast", "ego track must exist")
    everyone = [tracks.ego_track] + tracks.tracks
    n_a, k, horizon = len(everyone), params.modes, params.horizon
    dim = params.dim

    feats = np.stack([t.feature for t in everyone])
    poses = np.array([[t.box.x, t.box.y, t.box.yaw] for t in everyone])
    current = poses[:, :2]
    anchors = build_anchor_set(params.anchor_centroids, horizon, poses)

    p_a = mlp_forward(sinusoidal_pe(current, dim), params.kv_pos_proj)
    agent_kv = feats + p_a
    map_kv = None
    if map_queries is not None:
        map_kv = map_queries.thing_queries

    ctx = np.tile(params.ctx_init, (n_a, 1))
    prev_goal = anchors.endpoints_scene  # x_T^0 := scene-level anchor endpoints
    positions = np.broadcast_to(current[:, None, None, :], (n_a, k, horizon, 2)).copy()
    spreads = np.zeros((n_a, k, horizon, 3))
    final_ctx = ctx
    for layer in params.layers:
        qpos = build_qpos(anchors, current, prev_goal, params.qpos_mlps)
        ctx, positions, spreads = motion_layer(
            ctx, qpos, agent_kv, map_kv, bev, prev_goal, current, layer, k, horizon
        )
        prev_goal = positions[:, :, -1, :]
        final_ctx = ctx

    last = params.layers[-1] if params.layers else None
    if last is not None:
        score_logits = mlp_forward(final_ctx, last.score_head).reshape(n_a, k)
    else:
        score_logits = np.zeros((n_a, k))
    scores = softmax(score_logits, axis=1)

    traj = TrajectorySet(params=np.concatenate([positions, spreads], axis=-1), scores=scores)
    ctx_rows = final_ctx.reshape(n_a, k, dim)
    return MotionOutput(
        trajectories=traj,
        agent_ids=[t.track_id for t in everyone],
        current=current,
        q_x=ctx_rows.max(axis=1),
        p_a=p_a,
        ego_ctx=ctx_rows[0],
    )
