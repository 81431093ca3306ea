"""Orchestration: per-frame loop (track, map, motion, target smoothing,
occupancy, plan, optimize, metrics), artifact persistence, and suite
evaluation with scenario-level parallelism.

Seeds derive from the master seed through a splittable scheme
(SeedSequence spawn keys per module and scenario), so adding a module never
perturbs another module's stream. Runs are bitwise deterministic per
(config, seed, scenario).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .config import PipelineConfig, config_hash
from .errors import ConfigError, require
from .map_head import THING_CLASSES, MapHeadParams, decode_map
from .metrics import EvalAccumulator, MetricsReport
from .motion import MotionParams, forecast, kmeans_anchors, load_anchor_endpoints
from .occupancy import OccParams, fuse_agent_features, initial_state, merge_occupancy, occ_block
from .planner import PlannerParams, optimize_plan, plan_head
from .scene import (
    BevGrid,
    NoiseSpec,
    Scenario,
    corrupt_detections,
    rasterize_boxes,
    rasterize_polylines,
    synth_bev_features,
)
from .smoother import SmootherProblem, smooth
from .tracker import TrackState, TrackerParams, step_tracker

# fixed module indices for seed derivation; append-only so adding a module
# never changes existing streams
MODULE_SEEDS = {"detections": 1, "bev": 2, "tracker": 3, "map": 4, "motion": 5, "occ": 6, "plan": 7}

THREADS_ENV = "GOALSTACK_THREADS"


def derive_seed(master: int, module: str, scenario_index: int = 0) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(MODULE_SEEDS[module], int(scenario_index)))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class PipelineWeights:
    tracker: TrackerParams
    map: MapHeadParams
    motion: MotionParams
    occ: OccParams
    plan: PlannerParams


def build_weights(config: PipelineConfig, frame_rate: float = 2.0) -> PipelineWeights:
    config.validate()
    rng_for = lambda name: derive_seed(config.seed, name)
    anchors = kmeans_anchors(load_anchor_endpoints(), config.motion.modes, seed=rng_for("motion"))
    return PipelineWeights(
        tracker=TrackerParams.seeded(
            dim=config.dim,
            channels=config.dim,
            heads=config.heads,
            layers=config.tracker.layers,
            rng=np.random.default_rng(np.random.SeedSequence(entropy=rng_for("tracker"))),
            spawn_threshold=config.tracker.spawn_threshold,
            keep_threshold=config.tracker.keep_threshold,
            patience_frames=config.patience_frames(frame_rate),
            iou_gate=config.tracker.iou_gate,
        ),
        map=MapHeadParams.seeded(
            dim=config.dim,
            heads=config.heads,
            layers=config.map.layers,
            n_things=config.map.n_things,
            seed=rng_for("map"),
            mask_threshold=config.map.mask_threshold,
        ),
        motion=MotionParams.seeded(
            dim=config.dim,
            heads=config.heads,
            layers=config.motion.layers,
            modes=config.motion.modes,
            horizon=config.motion.horizon,
            seed=rng_for("motion"),
            anchor_centroids=anchors,
            deform_points=config.motion.deform_points,
        ),
        occ=OccParams.seeded(
            dim=config.dim,
            heads=config.heads,
            n_blocks=config.occ.blocks,
            seed=rng_for("occ"),
            merge_threshold=config.occ.merge_threshold,
        ),
        plan=PlannerParams.seeded(
            dim=config.dim,
            heads=config.heads,
            layers=config.plan.layers,
            horizon=config.plan.horizon,
            seed=rng_for("plan"),
            sigma=config.plan.sigma,
            gate=config.plan.gate,
            lam_coord=config.plan.lam_coord,
            lam_obs=config.plan.lam_obs,
            ego_w=config.plan.ego_w,
            ego_l=config.plan.ego_l,
            collision_pairs=config.plan.collision_pairs,
        ),
    )


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    scenario_id: str
    artifact_paths: dict
    metrics_path: str
    content_hash: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "scenario_id": self.scenario_id,
            "artifact_paths": self.artifact_paths,
            "metrics_path": self.metrics_path,
            "content_hash": self.content_hash,
            "wall_time_s": self.wall_time_s,
        }


def _gt_occupancy_grids(scenario: Scenario, t: int, steps: int, grid_spec) -> list:
    grids = []
    for offset in range(steps):
        if t + offset >= scenario.horizon:
            break
        boxes, ids, _ = scenario.agent_boxes_at(t + offset)
        grids.append(rasterize_boxes(grid_spec, boxes, ids))
    return grids


def _smoothed_future(future: np.ndarray, dt: float, cfg) -> np.ndarray:
    if future.shape[0] < 4:
        return future
    problem = SmootherProblem(
        target=future,
        dt=dt,
        lam_xy=cfg.lam_xy,
        lam_goal=cfg.lam_goal,
        phi_weights=np.full(5, cfg.phi_weight),
        segment_len=cfg.segment_len,
        continuity_weight=cfg.continuity_weight,
    )
    return smooth(problem)


def run_pipeline(
    config: PipelineConfig,
    scenario: Scenario,
    out_dir,
    scenario_id: str = "scenario",
    scenario_index: int = 0,
    weights: PipelineWeights | None = None,
) -> tuple[RunManifest, EvalAccumulator]:
    """Run the full per-frame loop over one scenario and persist all artifacts."""
    config.validate()
    t_start = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if weights is None:
        weights = build_weights(config, scenario.frame_rate)

    grid_spec = BevGrid.zeros(config.grid.h, config.grid.w, extent=config.grid.extent)
    noise = NoiseSpec(
        pos_std=config.noise.pos_std,
        yaw_std=config.noise.yaw_std,
        drop_prob=config.noise.drop_prob,
        fp_prob=config.noise.fp_prob,
        fp_candidates=config.noise.fp_candidates,
        score_std=config.noise.score_std,
    )
    from .scene import SynthFeatureConfig

    synth_cfg = SynthFeatureConfig(amplitude=config.synth.amplitude, noise_std=config.synth.noise_std)
    det_seed = derive_seed(config.seed, "detections", scenario_index)
    bev_seed = derive_seed(config.seed, "bev", scenario_index)

    acc = EvalAccumulator()
    tracking_frames: list = []
    motion_records: list = []
    map_counts: list = []
    occ_pairs: tuple | None = None
    planning_records: list = []

    track_lines: list = []
    forecast_lines: list = []
    plan_lines: list = []
    occ_index: list = []
    state = TrackState()
    t_o = config.occ.blocks
    t_p = config.plan.horizon

    for t in range(scenario.horizon):
        dets = corrupt_detections(scenario, t, noise, det_seed)
        bev = synth_bev_features(scenario, t, grid_spec, bev_seed, cfg=synth_cfg, channels=config.dim)

        state, track_rec = step_tracker(state, dets, bev, weights.tracker)
        track_lines.append(track_rec)

        map_queries, map_probs, panoptic = decode_map(bev, weights.map)
        mo = forecast(state, map_queries, bev, weights.motion)

        # --- occupancy over non-ego agents ---
        live_ids = mo.agent_ids[1:]
        q_a = np.stack([tr.feature for tr in state.tracks]) if state.tracks else np.zeros((0, config.dim))
        p_a = mo.p_a[1:]
        q_x = mo.q_x[1:]
        f_state = initial_state(bev, weights.occ)
        merged_grids: list = []
        inst_list: list = []
        for block in range(1, t_o + 1):
            g_t = fuse_agent_features(q_a, p_a, q_x, block, weights.occ)
            f_state, o_m, inst = occ_block(f_state, g_t, weights.occ, block)
            inst_list.append(inst)
            merged_grids.append(
                merge_occupancy(
                    inst, live_ids, grid_spec.extent, threshold=weights.occ.merge_threshold, shape=(config.grid.h, config.grid.w)
                )
            )

        # --- planning ---
        ego = state.ego_track
        ego_motion_feat = mo.ego_ctx.max(axis=0)
        tau_hat = plan_head(ego.feature, ego_motion_feat, scenario.command[t], bev, weights.plan, np.array([ego.box.x, ego.box.y]))
        occ_for_plan = [merged_grids[min(k, t_o - 1)] for k in range(1, t_p + 1)]
        plan_res = optimize_plan(
            tau_hat,
            occ_for_plan,
            lam_coord=weights.plan.lam_coord,
            lam_obs=weights.plan.lam_obs,
            sigma=weights.plan.sigma,
            gate=weights.plan.gate,
        )

        # --- metric accumulation ---
        boxes, ids, _ = scenario.agent_boxes_at(t)
        tracking_frames.append(
            {
                "preds": [{"id": r["id"], "x": r["x"], "y": r["y"], "score": r["score"]} for r in track_rec["tracks"]],
                "gts": [{"id": i, "x": b.x, "y": b.y} for i, b in zip(ids, boxes)],
            }
        )

        gt_entries = []
        for agent in scenario.agents:
            if agent.boxes[t] is None:
                continue
            future = scenario.future_track(agent.agent_id, t, config.motion.horizon)
            if future is None:
                continue
            if config.smoother.enabled:
                future = _smoothed_future(future, scenario.dt, config.smoother)
            gt_entries.append({"pos": np.array([agent.boxes[t].x, agent.boxes[t].y]), "future": future})
        pred_entries = []
        for row, tr in enumerate(state.tracks, start=1):
            pred_entries.append(
                {
                    "pos": np.array([tr.box.x, tr.box.y]),
                    "score": tr.score,
                    "modes": mo.trajectories.positions[row],
                }
            )
        if gt_entries or pred_entries:
            motion_records.append({"preds": pred_entries, "gts": gt_entries})

        layer_names = {"lane": "lanes", "divider": "dividers", "crossing": "crossings", "drivable": "drivable"}
        class_masks = {}
        for cls in THING_CLASSES + ("drivable",):
            gt_mask = rasterize_polylines(grid_spec, scenario.map.polylines(layer_names[cls])).data > 0
            if cls == "drivable":
                pred_mask = map_probs[-1] >= weights.map.mask_threshold
            else:
                cls_idx = THING_CLASSES.index(cls)
                assigned = np.argmax(map_queries.class_logits, axis=1) == cls_idx
                pred_mask = (map_probs[: weights.map.n_things][assigned] >= weights.map.mask_threshold).any(axis=0)
            class_masks[cls] = pred_mask
            inter = int((pred_mask & gt_mask).sum())
            union = int((pred_mask | gt_mask).sum())
            map_counts.append((cls, inter, union))

        if occ_pairs is None:
            # occupancy is scored once per scenario, on the first frame's
            # T_o-step prediction sequence against rasterized ground truth
            gt_grids = _gt_occupancy_grids(scenario, t, t_o, grid_spec)
            occ_pairs = (merged_grids[: len(gt_grids)], gt_grids, np.array([scenario.ego[t].x, scenario.ego[t].y]))

        gt_future = scenario.ego_future(t, t_p)
        if gt_future.shape[0] == t_p:
            agent_boxes = []
            for k in range(1, t_p + 1):
                step_boxes, _, _ = scenario.agent_boxes_at(t + k) if t + k < scenario.horizon else ([], [], [])
                agent_boxes.append(step_boxes)
            planning_records.append(
                {
                    "tau": plan_res.optimized.copy(),
                    "raw_tau": plan_res.raw.copy(),
                    "gt": gt_future,
                    "agent_boxes": agent_boxes,
                    "ego_yaw": scenario.ego[t].yaw,
                }
            )

        # --- artifacts ---
        forecast_lines.append(
            {
                "t": t,
                "agents": [
                    {
                        "id": int(aid),
                        "modes": [
                            {"score": float(mo.trajectories.scores[row, k]), "xy": mo.trajectories.positions[row, k].tolist()}
                            for k in range(config.motion.modes)
                        ],
                    }
                    for row, aid in enumerate(mo.agent_ids)
                ],
            }
        )
        plan_lines.append(
            {
                "t": t,
                "command": scenario.command[t],
                "raw": tau_hat.tolist(),
                "optimized": plan_res.optimized.tolist(),
                "objective_trace": [float(v) for v in plan_res.objective_trace],
            }
        )
        for offset, grid in enumerate(merged_grids):
            name = f"occupancy_t{t:03d}_o{offset}.pgm"
            artifacts.write_pgm(out / name, grid.data)
            occ_index.append({"t": t, "offset": offset, "file": name, "ids": sorted(int(i) for i in np.unique(grid.data) if i)})
            if config.write_occupancy_f32 and inst_list[offset].shape[0]:
                artifacts.write_f32_grid(out / f"occupancy_t{t:03d}_o{offset}.f32", inst_list[offset])
        artifacts.write_pgm(out / f"map_panoptic_t{t:03d}.pgm", panoptic.data)
        for cls, mask in class_masks.items():
            artifacts.write_pgm(out / f"map_{cls}_t{t:03d}.pgm", mask.astype(np.uint8) * 255)

    acc.tracking[scenario_id] = tracking_frames
    acc.motion[scenario_id] = motion_records
    acc.map_iou[scenario_id] = map_counts
    if occ_pairs is not None:
        acc.occupancy[scenario_id] = occ_pairs
    acc.planning[scenario_id] = planning_records

    artifacts.write_jsonl(out / "tracks.jsonl", track_lines)
    artifacts.write_jsonl(out / "forecasts.jsonl", forecast_lines)
    artifacts.write_jsonl(out / "plans.jsonl", plan_lines)
    artifacts.write_json(out / "occupancy_index.json", occ_index)
    artifacts.write_json(
        out / "map_index.json",
        [
            {
                "t": t,
                "panoptic": f"map_panoptic_t{t:03d}.pgm",
                "classes": {cls: f"map_{cls}_t{t:03d}.pgm" for cls in THING_CLASSES + ("drivable",)},
            }
            for t in range(scenario.horizon)
        ],
    )

    report = acc.report(
        ego_w=config.plan.ego_w,
        ego_l=config.plan.ego_l,
        frame_rate=scenario.frame_rate,
        recall_grid=config.metrics.recall_grid,
        match_dist=config.metrics.track_match_dist,
    )
    metrics_path = out / "metrics.json"
    artifacts.write_json(metrics_path, report.to_dict())

    tracked_files = sorted(str(p) for p in out.iterdir() if p.name != "manifest.json")
    manifest = RunManifest(
        config_hash=config_hash(config),
        seed=config.seed,
        scenario_id=scenario_id,
        artifact_paths={p.split("/")[-1]: p for p in tracked_files},
        metrics_path=str(metrics_path),
        content_hash=artifacts.content_hash(out, tracked_files),
        wall_time_s=time.monotonic() - t_start,
    )
    artifacts.write_json(out / "manifest.json", manifest.to_dict())
    return manifest, acc


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    if raw:
        try:
            n = int(raw)
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
        return max(1, n)
    return min(4, os.cpu_count() or 1)


def eval_suite(config: PipelineConfig, scenarios: list, out_dir) -> tuple[MetricsReport, dict]:
    """Run the pipeline over (scenario_id, Scenario) pairs and merge the metrics.

    Scenario-level parallelism is capped by GOALSTACK_THREADS; each scenario
    runs with isolated state, so parallel and serial execution are identical.
    """
    require(len(scenarios) >= 1, "pipeline-cli", "eval_suite", "need at least one scenario")
    ids = [sid for sid, _ in scenarios]
    require(len(ids) == len(set(ids)), "pipeline-cli", "eval_suite", "scenario ids must be unique")
    rates = {sc.frame_rate for _, sc in scenarios}
    require(len(rates) == 1, "pipeline-cli", "eval_suite", f"scenarios mix frame rates {sorted(rates)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weights_cache: dict = {}

    # build weights serially; the cache is read-only once workers start
    for sid, sc in scenarios:
        if sc.frame_rate not in weights_cache:
            weights_cache[sc.frame_rate] = build_weights(config, sc.frame_rate)

    def run_one(item):
        index, (sid, scenario) = item
        return run_pipeline(
            config, scenario, out / sid, scenario_id=sid, scenario_index=index, weights=weights_cache[scenario.frame_rate]
        )

    workers = thread_count()
    results = []
    if workers > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, enumerate(scenarios)))
    else:
        results = [run_one(item) for item in enumerate(scenarios)]

    merged = EvalAccumulator()
    for _, acc in results:
        merged = merged.merge(acc)
    report = merged.report(
        ego_w=config.plan.ego_w,
        ego_l=config.plan.ego_l,
        frame_rate=scenarios[0][1].frame_rate,
        recall_grid=config.metrics.recall_grid,
        match_dist=config.metrics.track_match_dist,
    )
    artifacts.write_json(out / "report.json", report.to_dict())
    _write_plot_data(report, out)
    manifests = {m.scenario_id: m.to_dict() for m, _ in results}
    artifacts.write_json(out / "suite_manifest.json", {"config_hash": config_hash(config), "scenarios": manifests})
    return report, manifests


def _write_plot_data(report: MetricsReport, out: Path) -> None:
    rows = []
    for h in (1, 2, 3):
        l2 = report.values.get(f"l2_{h}s")
        col = report.values.get(f"collision_{h}s")
        if l2 is not None:
            rows.append((float(h), l2, col))
    if rows:
        artifacts.write_csv(out / "planning_curves.csv", ["horizon_s", "l2_m", "collision_rate"], rows)
    flat = sorted(report.values.items())
    artifacts.write_csv(out / "metrics.csv", ["metric", "value"], [(k, float(v)) for k, v in flat])


def noise_sweep(config: PipelineConfig, scenarios: list, out_dir, pos_stds: list) -> list:
    """Re-evaluate the suite at several detection-noise levels; emits sweep CSV."""
    from dataclasses import replace

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for std in pos_stds:
        cfg = replace(config, noise=replace(config.noise, pos_std=float(std)))
        report, _ = eval_suite(cfg, scenarios, out / f"noise_{std:g}")
        rows.append(
            (
                float(std),
                report.values.get("amota", float("nan")),
                report.values.get("min_ade", float("nan")),
                report.values.get("l2_avg", float("nan")),
                report.values.get("collision_avg", float("nan")),
            )
        )
    artifacts.write_csv(out / "noise_sweep.csv", ["pos_std", "amota", "min_ade", "l2_avg", "collision_avg"], rows)
    return rows
