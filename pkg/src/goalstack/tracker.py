"""Track lifecycle: Hungarian matching on rotated-IoU cost, score-gated
spawning, patience-based death, and attention-based query feature updates.

The ego vehicle holds a dedicated track that is updated straight from the
ground-truth pose channel and never enters bipartite matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import require
from .kernels import DecoderBlockParams, MlpParams, AttentionParams, decoder_block, mlp_forward, mha
from .scene import BevGrid, Box2d, DetectionFrame

EGO_ID = 0
GATE_COST = 1e6


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of size min(n, m)."""
    cost = np.asarray(cost, dtype=float)
    require(cost.ndim == 2, "tracker", "hungarian", "cost must be a matrix")
    require(bool(np.isfinite(cost).all()), "tracker", "hungarian", "costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip a polygon by a convex CCW polygon."""
    output = list(subject)
    for i in range(len(clip)):
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge = b - a
        if not output:
            break
        inputs, output = output, []
        prev = inputs[-1]
        f_prev = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0])
        for curr in inputs:
            f_curr = edge[0] * (curr[1] - a[1]) - edge[1] * (curr[0] - a[0])
            if (f_curr >= 0.0) != (f_prev >= 0.0):
                t = f_prev / (f_prev - f_curr)
                output.append(prev + t * (curr - prev))
            if f_curr >= 0.0:
                output.append(curr)
            prev, f_prev = curr, f_curr
    return np.array(output) if output else np.zeros((0, 2))


def rotated_iou(a: Box2d, b: Box2d) -> float:
    """Exact BEV IoU of two rotated boxes via convex polygon clipping."""
    if a == b:
        return 1.0
    ca, cb = a.corners(), b.corners()
    # cheap reject: disjoint bounding circles
    ra = math.hypot(a.w, a.l) / 2.0
    rb = math.hypot(b.w, b.l) / 2.0
    if math.hypot(a.x - b.x, a.y - b.y) >= ra + rb:
        return 0.0
    inter_poly = _clip_polygon(ca, cb)
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(_polygon_area(inter_poly))
    union = a.w * a.l + b.w * b.l - inter
    if union <= 0.0:
        return 1.0
    return min(1.0, inter / union)


@dataclass
class AgentTrack:
    track_id: int
    box: Box2d
    score: float
    feature: np.ndarray  # (D,)
    age: int = 1
    misses: int = 0


@dataclass
class TrackState:
    tracks: list = field(default_factory=list)  # non-ego AgentTrack, ordered by id
    ego_track: AgentTrack | None = None
    next_id: int = 1


@dataclass(frozen=True)
class TrackerParams:
    """Thresholds from the inference lifecycle rules plus seeded feature nets."""

    dim: int
    spawn_threshold: float = 0.4
    keep_threshold: float = 0.35
    patience_frames: int = 4
    iou_gate: float = 0.1
    feature_proj: MlpParams = None  # BEV sample (C) + PE -> D for newborn features
    enrich_blocks: tuple = ()  # decoder blocks: tracks cross-attend to own BEV samples
    qim_attn: AttentionParams = None  # one MHSA over the track-feature set
    qim_mlp: MlpParams = None  # MLP residual after the MHSA

    @classmethod
    def seeded(cls, dim: int, channels: int, heads: int, layers: int, rng: np.random.Generator, **kw) -> "TrackerParams":
        return cls(
            dim=dim,
            feature_proj=MlpParams.seeded([channels + dim, dim], rng),
            enrich_blocks=tuple(DecoderBlockParams.seeded(dim, heads, rng) for _ in range(layers)),
            qim_attn=AttentionParams.seeded(dim, heads, rng),
            qim_mlp=MlpParams.seeded([dim, dim, dim], rng),
            **kw,
        )


def _box_keypoints(box: Box2d) -> np.ndarray:
    return np.concatenate([box.center[None, :], box.corners()], axis=0)  # (5, 2)


def _init_feature(box: Box2d, feature_seed: int, bev: BevGrid, params: TrackerParams) -> np.ndarray:
    """Newborn query feature: projected BEV sample at the box centre plus seeded noise."""
    sample = kernels.bilinear_sample(bev, box.center[None, :])
    pe = kernels.sinusoidal_pe(box.center[None, :], params.dim)
    feat = mlp_forward(np.concatenate([sample, pe], axis=1), params.feature_proj)[0]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(feature_seed)))
    return feat + 0.01 * rng.standard_normal(params.dim)


def _refresh_features(tracks: list[AgentTrack], bev: BevGrid, params: TrackerParams) -> None:
    """Per-frame feature update, in place.

    First each track enriches its feature by cross-attending to BEV samples at
    its own box keypoints (block-diagonal mask); then the whole set runs one
    MHSA followed by an MLP residual.
    """
    if not tracks:
        return
    feats = np.stack([t.feature for t in tracks])
    n = len(tracks)
    if params.enrich_blocks:
        keys = np.concatenate([kernels.bilinear_sample(bev, _box_keypoints(t.box)) for t in tracks], axis=0)
        k_per = 5
        proj_in = np.concatenate(
            [keys, kernels.sinusoidal_pe(np.concatenate([_box_keypoints(t.box) for t in tracks]), params.dim)], axis=1
        )
        kv = mlp_forward(proj_in, params.feature_proj)
        mask = np.zeros((n, n * k_per), dtype=bool)
        for i in range(n):
            mask[i, i * k_per : (i + 1) * k_per] = True
        for blk in params.enrich_blocks:
            feats = decoder_block(feats, kv, blk, mask=mask)
    attended = mha(feats, feats, feats, params.qim_attn)
    feats = feats + mlp_forward(attended, params.qim_mlp)
    for t, f in zip(tracks, feats):
        t.feature = f


def step_tracker(state: TrackState, dets: DetectionFrame, bev: BevGrid, params: TrackerParams) -> tuple[TrackState, dict]:
    """One tracking step; consumes and returns state plus the frame's output record.

    Matching: Hungarian on cost 1 - rotated_iou, pairs below the IoU gate
    forbidden. Matched tracks adopt the detection box/score; a frame counts
    against a track when it is unmatched or matched below the keep threshold,
    and patience_frames consecutive such frames remove it. Unmatched
    detections at or above the spawn threshold start new tracks.
    """
    require(params.patience_frames >= 1, "tracker", "step_tracker", "patience_frames must be >= 1")
    tracks = [replace(t, feature=t.feature.copy()) for t in state.tracks]
    detections = list(dets.detections)

    matched_tracks: set[int] = set()
    matched_dets: set[int] = set()
    if tracks and detections:
        cost = np.empty((len(tracks), len(detections)))
        for i, tr in enumerate(tracks):
            for j, d in enumerate(detections):
                iou = rotated_iou(tr.box, d.box)
                cost[i, j] = 1.0 - iou if iou >= params.iou_gate else GATE_COST
        for i, j in hungarian(cost):
            if cost[i, j] >= GATE_COST:
                continue
            matched_tracks.add(i)
            matched_dets.add(j)
            tr, d = tracks[i], detections[j]
            tr.box = d.box
            tr.score = d.score
            tr.age += 1
            tr.misses = tr.misses + 1 if d.score < params.keep_threshold else 0

    for i, tr in enumerate(tracks):
        if i not in matched_tracks:
            tr.age += 1
            tr.misses += 1

    next_id = state.next_id
    for j, d in enumerate(detections):
        if j in matched_dets or d.score < params.spawn_threshold:
            continue
        feature = _init_feature(d.box, d.feature_seed, bev, params)
        tracks.append(AgentTrack(next_id, d.box, d.score, feature))
        next_id += 1

    tracks = [t for t in tracks if t.misses < params.patience_frames]

    ego_box = dets.ego_box
    if state.ego_track is None:
        ego = AgentTrack(EGO_ID, ego_box, 1.0, _init_feature(ego_box, EGO_ID, bev, params))
    else:
        ego = replace(state.ego_track, box=ego_box, score=1.0, age=state.ego_track.age + 1, feature=state.ego_track.feature.copy())

    everyone = [ego] + tracks
    _refresh_features(everyone, bev, params)

    new_state = TrackState(tracks=tracks, ego_track=ego, next_id=next_id)
    record = {
        "t": dets.t,
        "tracks": [
            {"id": t.track_id, "x": t.box.x, "y": t.box.y, "w": t.box.w, "l": t.box.l, "yaw": t.box.yaw, "score": t.score}
            for t in tracks
        ],
    }
    return new_state, record


def track_features(state: TrackState) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """(Q_A, positions, ids) over ego + live tracks; ego always first."""
    everyone = [state.ego_track] + state.tracks
    feats = np.stack([t.feature for t in everyone])
    pos = np.array([[t.box.x, t.box.y] for t in everyone])
    return feats, pos, [t.track_id for t in everyone]
