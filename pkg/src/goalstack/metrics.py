"""Evaluation suite: tracking (AMOTA/AMOTP/Recall/IDS), map IoU, motion
(minADE/minFDE/MR/EPA/minFDE-mAP), occupancy (IoU and VPQ, near/far), and
planning (L2, collision rate).

Aggregation is a commutative monoid: accumulators keyed by scenario merge by
dict union, and reports are computed from the pooled records in scenario-id
order, so merged partial results equal a single-pass evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import require
from .scene import BevGrid, Box2d
from .tracker import rotated_iou


@dataclass
class MetricsReport:
    """Named scalar map with count provenance behind each ratio."""

    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def merged_with(self, other: "MetricsReport") -> "MetricsReport":
        out = MetricsReport(dict(self.values), dict(self.provenance))
        out.values.update(other.values)
        out.provenance.update(other.provenance)
        return out

    def to_dict(self) -> dict:
        return {"values": self.values, "provenance": self.provenance}


# ---------------------------------------------------------------------------
# tracking


def _greedy_match(preds: list, gts: list, max_dist: float) -> list:
    """Greedy nearest-centre matching; returns (pred_idx, gt_idx, dist) triples."""
    pairs = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            d = math.hypot(p["x"] - g["x"], p["y"] - g["y"])
            if d < max_dist:
                pairs.append((d, i, j))
    pairs.sort(key=lambda t: (t[0], t[1], t[2]))
    used_p, used_g, out = set(), set(), []
    for d, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j, d))
    return out


def _mot_counts(frames: list, threshold: float, max_dist: float):
    """FP, FN, IDS, TP and summed match distance at one score threshold."""
    fp = fn = ids = tp = 0
    dist_sum = 0.0
    last_match: dict = {}
    for frame in frames:
        preds = [p for p in frame["preds"] if p["score"] >= threshold]
        gts = frame["gts"]
        matches = _greedy_match(preds, gts, max_dist)
        fp += len(preds) - len(matches)
        fn += len(gts) - len(matches)
        tp += len(matches)
        for i, j, d in matches:
            dist_sum += d
            gid = gts[j]["id"]
            pid = preds[i]["id"]
            if gid in last_match and last_match[gid] != pid:
                ids += 1
            last_match[gid] = pid
    return fp, fn, ids, tp, dist_sum


def amota(frames: list, recall_grid: int = 40, match_dist: float = 2.0) -> MetricsReport:
    """Recall-averaged tracking metrics over a stream of per-frame records.

    Each frame is {"preds": [{"id","x","y","score"}], "gts": [{"id","x","y"}]}.
    Empty ground truth leaves the tracking metrics absent rather than zero.
    """
    report = MetricsReport()
    gt_total = sum(len(f["gts"]) for f in frames)
    if gt_total == 0:
        report.provenance["tracking"] = {"gt": 0}
        return report

    # score-threshold operating points from a single score-descending sweep
    entries = []
    for fi, frame in enumerate(frames):
        for p in frame["preds"]:
            entries.append((p["score"], fi, p))
    entries.sort(key=lambda e: -e[0])
    matched_gt: set = set()
    recall_at_score = []
    tp_running = 0
    for score, fi, p in entries:
        best = None
        for j, g in enumerate(frames[fi]["gts"]):
            if (fi, j) in matched_gt:
                continue
            d = math.hypot(p["x"] - g["x"], p["y"] - g["y"])
            if d < match_dist and (best is None or d < best[0]):
                best = (d, j)
        if best is not None:
            matched_gt.add((fi, best[1]))
            tp_running += 1
        recall_at_score.append((tp_running / gt_total, score))
    max_recall = recall_at_score[-1][0] if recall_at_score else 0.0

    n = recall_grid
    levels = [(k + 1) / (n - 1) for k in range(n - 1)]
    mota_values = []
    motp_values = []
    for r in levels:
        if r > max_recall + 1e-12:
            mota_values.append(0.0)
            continue
        threshold = next(s for rec, s in recall_at_score if rec >= r - 1e-12)
        fp, fn, ids, tp, dist_sum = _mot_counts(frames, threshold, match_dist)
        # clamp into [0, 1]: with tied scores an operating point can overshoot
        # its recall level, making the (1-r)*GT compensation exceed the errors
        mota = min(1.0, max(0.0, 1.0 - (fp + fn + ids - (1.0 - r) * gt_total) / (r * gt_total)))
        mota_values.append(mota)
        if tp > 0:
            motp_values.append(dist_sum / tp)

    fp0, fn0, ids0, tp0, _ = _mot_counts(frames, 0.0, match_dist)
    report.values["amota"] = float(np.mean(mota_values))
    report.values["amotp"] = float(np.mean(motp_values)) if motp_values else 0.0
    report.values["recall"] = tp0 / gt_total
    report.values["ids"] = float(ids0)
    report.provenance["tracking"] = {"gt": gt_total, "fp@0": fp0, "fn@0": fn0, "ids@0": ids0, "levels": len(levels)}
    return report


# ---------------------------------------------------------------------------
# motion forecasting


def motion_metrics(records: list, match_dist: float = 1.0, miss_threshold: float = 2.0, epa_fp_coef: float = 0.5) -> MetricsReport:
    """Forecast metrics over per-frame records of predicted and ground-truth agents.

    Each record is {"preds": [{"pos" (2,), "score", "modes" (K,T,2)}],
    "gts": [{"pos" (2,), "future" (T,2)}]}; metrics use matched pairs only.
    """
    report = MetricsReport()
    n_gt = 0
    n_fp = 0
    tp_entries = []
    ap_entries = []
    for rec in records:
        preds = [{"x": p["pos"][0], "y": p["pos"][1], **p} for p in rec["preds"]]
        gts = [{"x": g["pos"][0], "y": g["pos"][1], **g} for g in rec["gts"]]
        n_gt += len(gts)
        matches = _greedy_match(preds, gts, match_dist)
        matched_preds = {i for i, _, _ in matches}
        n_fp += len(preds) - len(matched_preds)
        for i, j, _ in matches:
            modes = np.asarray(preds[i]["modes"], dtype=float)
            future = np.asarray(gts[j]["future"], dtype=float)
            err = np.linalg.norm(modes - future[None, :, :], axis=-1)  # (K, T)
            minade = float(err.mean(axis=1).min())
            minfde = float(err[:, -1].min())
            tp_entries.append((minade, minfde))
            ap_entries.append((preds[i]["score"], minfde < miss_threshold))
        for i, p in enumerate(preds):
            if i not in matched_preds:
                ap_entries.append((p["score"], False))

    prov = {"gt": n_gt, "tp": len(tp_entries), "fp": n_fp}
    report.provenance["motion"] = prov
    if tp_entries:
        ades = np.array([a for a, _ in tp_entries])
        fdes = np.array([f for _, f in tp_entries])
        report.values["min_ade"] = float(ades.mean())
        report.values["min_fde"] = float(fdes.mean())
        report.values["miss_rate"] = float((fdes > miss_threshold).mean())
    if n_gt > 0:
        hits = sum(1 for _, f in tp_entries if f < miss_threshold)
        report.values["epa"] = max(0.0, (hits - epa_fp_coef * n_fp) / n_gt)
        report.values["min_fde_map"] = _eleven_point_ap(ap_entries, n_gt)
    return report


def _eleven_point_ap(entries: list, n_gt: int) -> float:
    """11-point interpolated AP over (score, is_tp) entries."""
    if n_gt == 0:
        return 0.0
    entries = sorted(entries, key=lambda e: -e[0])
    tp = 0
    precisions, recalls = [], []
    for k, (_, is_tp) in enumerate(entries, start=1):
        if is_tp:
            tp += 1
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        p_at = [p for p, rec in zip(precisions, recalls) if rec >= r - 1e-12]
        ap += max(p_at) if p_at else 0.0
    return float(ap / 11.0)


# ---------------------------------------------------------------------------
# occupancy


def _range_window(grid: BevGrid, ego_pos: np.ndarray, half_extent: float) -> np.ndarray:
    centers = grid.cell_centers()
    return (np.abs(centers[..., 0] - ego_pos[0]) < half_extent) & (np.abs(centers[..., 1] - ego_pos[1]) < half_extent)


@dataclass
class _VpqState:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0


def occupancy_metrics(pred_grids: list, gt_grids: list, ego_pos, near: float = 15.0, far: float = 50.0, vpq_iou: float = 0.5) -> MetricsReport:
    """Whole-scene IoU and VPQ over a temporal sequence of instance-id grids.

    near/far are half-extents of the evaluation windows around the ego
    position (15 m -> 30x30 m and 50 m -> 100x100 m ranges).
    """
    require(len(pred_grids) == len(gt_grids), "metrics", "occupancy_metrics", "pred/gt length mismatch")
    report = MetricsReport()
    ego_pos = np.asarray(ego_pos, dtype=float)
    for tag, half in (("near", near), ("far", far)):
        inter = union = 0
        vpq = _VpqState()
        assoc: dict = {}
        assoc_rev: dict = {}
        for pred, gt in zip(pred_grids, gt_grids):
            require(pred.data.shape == gt.data.shape, "metrics", "occupancy_metrics", "grid shape mismatch")
            window = _range_window(pred, ego_pos, half)
            p = np.where(window, pred.data, 0)
            g = np.where(window, gt.data, 0)
            inter += int(((p > 0) & (g > 0)).sum())
            union += int(((p > 0) | (g > 0)).sum())
            _vpq_frame(p, g, vpq, assoc, assoc_rev, vpq_iou)
        report.values[f"iou_{tag}"] = inter / union if union else 1.0
        denom = vpq.tp + 0.5 * vpq.fp + 0.5 * vpq.fn
        report.values[f"vpq_{tag}"] = vpq.iou_sum / denom if denom else 1.0
        report.provenance[f"occupancy_{tag}"] = {"inter": inter, "union": union, "tp": vpq.tp, "fp": vpq.fp, "fn": vpq.fn}
    return report


def _vpq_frame(p: np.ndarray, g: np.ndarray, state: _VpqState, assoc: dict, assoc_rev: dict, iou_threshold: float) -> None:
    pred_ids = [i for i in np.unique(p) if i != 0]
    gt_ids = [i for i in np.unique(g) if i != 0]
    matched_p, matched_g = set(), set()
    for gid in gt_ids:
        gmask = g == gid
        overlapping = np.unique(p[gmask])
        for pid in overlapping:
            if pid == 0:
                continue
            pmask = p == pid
            inter = int((gmask & pmask).sum())
            union = int((gmask | pmask).sum())
            iou = inter / union if union else 0.0
            if iou <= iou_threshold:
                continue
            # temporal consistency: a gt keeps its first associated pred id
            if assoc.get(gid, pid) != pid or assoc_rev.get(pid, gid) != gid:
                continue
            assoc[gid] = pid
            assoc_rev[pid] = gid
            state.tp += 1
            state.iou_sum += iou
            matched_p.add(pid)
            matched_g.add(gid)
            break
    state.fp += len([i for i in pred_ids if i not in matched_p])
    state.fn += len([i for i in gt_ids if i not in matched_g])


# ---------------------------------------------------------------------------
# planning


def planning_metrics(records: list, ego_w: float = 1.85, ego_l: float = 4.08, frame_rate: float = 2.0) -> MetricsReport:
    """L2 error and collision rate at 1/2/3 s horizons, averaged over records.

    Each record is {"tau" (T_p, 2), "gt" (>=T_p, 2), "agent_boxes": per-step
    lists of Box2d, "ego_yaw": initial heading}. A step collides when the ego
    box placed on the waypoint overlaps any ground-truth agent box.
    """
    from .planner import heading_along

    report = MetricsReport()
    horizons = (1.0, 2.0, 3.0)
    l2 = {h: [] for h in horizons}
    col = {h: [] for h in horizons}
    for rec in records:
        tau = np.asarray(rec["tau"], dtype=float)
        gt = np.asarray(rec["gt"], dtype=float)
        steps = min(tau.shape[0], gt.shape[0])
        yaws = heading_along(tau, rec.get("ego_yaw", 0.0))
        collide = np.zeros(steps, dtype=bool)
        for t in range(steps):
            ego = Box2d(tau[t, 0], tau[t, 1], ego_w, ego_l, yaws[t])
            for b in rec["agent_boxes"][t]:
                if rotated_iou(ego, b) > 0.0:
                    collide[t] = True
                    break
        for h in horizons:
            k = int(round(h * frame_rate))
            if k <= steps:
                l2[h].append(float(np.linalg.norm(tau[k - 1] - gt[k - 1])))
                col[h].append(float(collide[:k].mean()))
    for h in horizons:
        if l2[h]:
            report.values[f"l2_{h:.0f}s"] = float(np.mean(l2[h]))
            report.values[f"collision_{h:.0f}s"] = float(np.mean(col[h]))
    have = [report.values.get(f"l2_{h:.0f}s") for h in horizons]
    if all(v is not None for v in have):
        report.values["l2_avg"] = float(np.mean([report.values[f"l2_{h:.0f}s"] for h in horizons]))
        report.values["collision_avg"] = float(np.mean([report.values[f"collision_{h:.0f}s"] for h in horizons]))
    report.provenance["planning"] = {"records": len(records)}
    return report


# ---------------------------------------------------------------------------
# mergeable accumulators


@dataclass
class EvalAccumulator:
    """Per-scenario raw records; merging is dict union, reports pool in id order."""

    tracking: dict = field(default_factory=dict)  # scenario id -> list of frames
    motion: dict = field(default_factory=dict)
    map_iou: dict = field(default_factory=dict)  # scenario id -> list of (inter, union) per class
    occupancy: dict = field(default_factory=dict)  # scenario id -> (pred grids, gt grids, ego_pos)
    planning: dict = field(default_factory=dict)

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        out = EvalAccumulator()
        for name in ("tracking", "motion", "map_iou", "occupancy", "planning"):
            mine = dict(getattr(self, name))
            theirs = getattr(other, name)
            overlap = set(mine) & set(theirs)
            require(not overlap, "metrics", "merge", f"duplicate scenario ids {sorted(overlap)}")
            mine.update(theirs)
            setattr(out, name, mine)
        return out

    def report(self, ego_w: float = 1.85, ego_l: float = 4.08, frame_rate: float = 2.0, **kw) -> MetricsReport:
        report = MetricsReport()
        # namespace ids per scenario: generators and trackers both restart ids
        # at 1, and pooled id-consistency checks must not cross scenarios
        frames = [
            {
                "preds": [dict(p, id=(sid, p["id"])) for p in f["preds"]],
                "gts": [dict(g, id=(sid, g["id"])) for g in f["gts"]],
            }
            for sid in sorted(self.tracking)
            for f in self.tracking[sid]
        ]
        if frames:
            report = report.merged_with(amota(frames, **{k: v for k, v in kw.items() if k in ("recall_grid", "match_dist")}))
        recs = [r for sid in sorted(self.motion) for r in self.motion[sid]]
        if recs:
            report = report.merged_with(motion_metrics(recs))
        if self.map_iou:
            sums: dict = {}
            for sid in sorted(self.map_iou):
                for cls, inter, union in self.map_iou[sid]:
                    a, b = sums.get(cls, (0, 0))
                    sums[cls] = (a + inter, b + union)
            for cls, (inter, union) in sorted(sums.items()):
                report.values[f"map_iou_{cls}"] = inter / union if union else 1.0
            report.provenance["map"] = {cls: {"inter": i, "union": u} for cls, (i, u) in sorted(sums.items())}
        if self.occupancy:
            occ_reports = []
            for sid in sorted(self.occupancy):
                preds, gts, ego_pos = self.occupancy[sid]
                occ_reports.append(occupancy_metrics(preds, gts, ego_pos))
            for key in ("iou_near", "iou_far", "vpq_near", "vpq_far"):
                report.values[key] = float(np.mean([r.values[key] for r in occ_reports]))
            report.provenance["occupancy"] = {"scenarios": len(occ_reports)}
        precs = [r for sid in sorted(self.planning) for r in self.planning[sid]]
        if precs:
            report = report.merged_with(planning_metrics(precs, ego_w=ego_w, ego_l=ego_l, frame_rate=frame_rate))
        return report
