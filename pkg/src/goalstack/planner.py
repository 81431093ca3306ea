"""Planning: command-conditioned plan query, BEV cross-attention trajectory
head, Newton-style collision-avoidance refinement against merged occupancy,
and the dilated-IoU collision loss evaluator.

The refinement objective is separable per waypoint:

    f(tau) = lam_coord * sum_t ||tau_t - tau_hat_t||_2
           + lam_obs   * sum_t D(tau_t, O^t)

where D sums isotropic Gaussian densities over occupied cells within distance
d of the waypoint. Each waypoint takes damped 2x2 Newton steps (Levenberg mu,
x10 on rejection) with Armijo backtracking; the objective trace never
increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import require
from .kernels import (
    DecoderBlockParams,
    MlpParams,
    decoder_block,
    mlp_forward,
    sinusoidal_pe,
    xavier_uniform,
)
from .scene import BevGrid, Box2d
from .tracker import rotated_iou

COMMANDS = ("left", "right", "forward")


@dataclass(frozen=True)
class PlannerParams:
    dim: int
    horizon: int  # T_p
    command_embed: np.ndarray  # (3, D)
    fuse: MlpParams  # 3D -> D plan query fusion
    query_pos: np.ndarray  # (1, D) learned position embedding
    blocks: tuple  # DecoderBlockParams
    bev_pe_proj: MlpParams
    reg_head: MlpParams  # D -> T_p * 2
    sigma: float = 1.0
    gate: float = 5.0
    lam_coord: float = 1.0
    lam_obs: float = 5.0
    ego_w: float = 1.85
    ego_l: float = 4.08
    collision_pairs: tuple = ((1.0, 0.0), (0.4, 0.5), (0.1, 1.0))

    @classmethod
    def seeded(cls, dim: int, heads: int, layers: int, horizon: int, seed: int, **kw) -> "PlannerParams":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
        return cls(
            dim=dim,
            horizon=horizon,
            command_embed=rng.standard_normal((3, dim)),
            fuse=MlpParams.seeded([3 * dim, dim, dim], rng),
            query_pos=rng.standard_normal((1, dim)) * 0.02,
            blocks=tuple(DecoderBlockParams.seeded(dim, heads, rng) for _ in range(layers)),
            bev_pe_proj=MlpParams.seeded([dim, dim], rng),
            reg_head=MlpParams.seeded([dim, dim, horizon * 2], rng),
            **kw,
        )


def plan_head(ego_track_feat: np.ndarray, ego_motion_feat: np.ndarray, command: str, bev: BevGrid, params: PlannerParams, ego_pos: np.ndarray) -> np.ndarray:
    """Raw plan tau_hat (T_p, 2): plan-query cross-attention over the BEV plus a
    regression of per-waypoint offsets from the ego position."""
    require(command in COMMANDS, "planner", "plan_head", f"unknown command {command!r}")
    require(ego_track_feat.shape == (params.dim,) and ego_motion_feat.shape == (params.dim,), "planner", "plan_head", "ego features must be D-dimensional")
    cmd = params.command_embed[COMMANDS.index(command)]
    q = mlp_forward(np.concatenate([ego_track_feat, ego_motion_feat, cmd])[None, :], params.fuse)
    q = q + params.query_pos
    tokens = bev.data.reshape(-1, params.dim)
    keys = tokens + mlp_forward(sinusoidal_pe(bev.cell_centers().reshape(-1, 2), params.dim), params.bev_pe_proj)
    for blk in params.blocks:
        q = decoder_block(q, keys, blk)
    offsets = mlp_forward(q, params.reg_head).reshape(params.horizon, 2)
    return np.asarray(ego_pos, dtype=float)[None, :] + offsets


def _occupied_centers(grid: BevGrid) -> np.ndarray:
    """World coordinates of occupied cells of a merged instance-id grid."""
    ii, jj = np.nonzero(grid.data)
    if len(ii) == 0:
        return np.zeros((0, 2))
    return grid.cell_to_world(np.stack([ii, jj], axis=-1).astype(float))


def collision_potential(tau: np.ndarray, occupancy: list, sigma: float, gate: float) -> float:
    """Sum over waypoints of gated Gaussian mass around occupied cells.

    occupancy holds one merged id grid per waypoint step (entry t matches
    waypoint t); a cell contributes only within the distance gate.
    """
    require(sigma > 0 and gate > 0, "planner", "collision_potential", "sigma and gate must be positive")
    tau = np.asarray(tau, dtype=float)
    total = 0.0
    for t in range(tau.shape[0]):
        total += _potential_single(tau[t], _occupied_centers(occupancy[t]), sigma, gate)[0]
    return float(total)


def _potential_single(p: np.ndarray, centers: np.ndarray, sigma: float, gate: float, with_derivs: bool = False):
    """Potential (and optionally gradient/Hessian) of one waypoint."""
    if centers.shape[0] == 0:
        if with_derivs:
            return 0.0, np.zeros(2), np.zeros((2, 2))
        return (0.0,)
    delta = p[None, :] - centers
    d2 = (delta**2).sum(axis=1)
    keep = d2 < gate * gate
    if not keep.any():
        if with_derivs:
            return 0.0, np.zeros(2), np.zeros((2, 2))
        return (0.0,)
    delta = delta[keep]
    d2 = d2[keep]
    norm = 1.0 / (2.0 * math.pi * sigma**2)
    dens = norm * np.exp(-d2 / (2.0 * sigma**2))
    value = float(dens.sum())
    if not with_derivs:
        return (value,)
    grad = -(delta * dens[:, None]).sum(axis=0) / sigma**2
    outer = np.einsum("ni,nj,n->ij", delta, delta, dens) / sigma**4
    hess = outer - np.eye(2) * value / sigma**2
    return value, grad, hess


def collision_potential_grad_hess(p: np.ndarray, grid: BevGrid, sigma: float, gate: float):
    """Value, gradient and Hessian of the potential at a single waypoint."""
    return _potential_single(np.asarray(p, dtype=float), _occupied_centers(grid), sigma, gate, with_derivs=True)


@dataclass
class PlanResult:
    raw: np.ndarray  # tau_hat (T_p, 2)
    optimized: np.ndarray  # tau* (T_p, 2)
    objective_trace: list = field(default_factory=list)
    final_grad_norm: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        diffs = np.diff(np.asarray(self.objective_trace))
        require(bool((diffs <= 1e-12).all()), "planner", "PlanResult", "objective trace must be non-increasing")


def optimize_plan(
    tau_hat: np.ndarray,
    occupancy: list,
    lam_coord: float = 1.0,
    lam_obs: float = 5.0,
    sigma: float = 1.0,
    gate: float = 5.0,
    max_iters: int = 100,
    grad_tol: float = 1e-6,
) -> PlanResult:
    """Per-waypoint damped Newton descent of the collision-avoidance objective."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    require(bool(np.isfinite(tau_hat).all()), "planner", "optimize_plan", "non-finite raw plan")
    t_p = tau_hat.shape[0]
    centers = [_occupied_centers(occupancy[t]) for t in range(t_p)]

    def term(t: int, p: np.ndarray):
        dev = p - tau_hat[t]
        n = float(np.linalg.norm(dev))
        val, g_obs, h_obs = _potential_single(p, centers[t], sigma, gate, with_derivs=True)
        cost = lam_coord * n + lam_obs * val
        if n > 0:
            g = lam_coord * dev / n + lam_obs * g_obs
            h = lam_coord * (np.eye(2) / n - np.outer(dev, dev) / n**3) + lam_obs * h_obs
        else:
            g = lam_obs * g_obs
            h = lam_obs * h_obs
        return cost, g, h

    tau = tau_hat.copy()
    mus = np.full(t_p, 1e-3)
    costs = np.empty(t_p)
    grads = np.empty((t_p, 2))
    hessians = np.empty((t_p, 2, 2))
    for t in range(t_p):
        costs[t], grads[t], hessians[t] = term(t, tau[t])
    trace = [float(costs.sum())]

    def escape_step(t: int):
        """Negative-curvature escape for gradient-flat local maxima/saddles.

        An obstacle centred exactly on a waypoint has zero gradient there by
        symmetry; stepping along the most-negative Hessian eigenvector (either
        sign, strict decrease required) moves the waypoint off the peak.
        """
        evals, evecs = np.linalg.eigh(hessians[t])
        if evals[0] >= -1e-9:
            return None
        v = evecs[:, 0]
        for direction in (v, -v):
            alpha = 1.0
            for _bt in range(20):
                cand = tau[t] + alpha * direction
                c_new = term(t, cand)
                if c_new[0] < costs[t] - 1e-12:
                    return cand, c_new
                alpha *= 0.5
        return None

    for _ in range(max_iters):
        moved = False
        flat = True
        for t in range(t_p):
            g, h = grads[t], hessians[t]
            step = None
            if float(np.linalg.norm(g)) >= grad_tol / max(1, t_p):
                flat = False
                try:
                    delta = np.linalg.solve(h + mus[t] * np.eye(2), -g)
                except np.linalg.LinAlgError:
                    delta = -g
                slope = float(g @ delta)
                if slope >= 0:
                    delta = -g
                    slope = float(g @ delta)
                alpha = 1.0
                for _bt in range(30):
                    cand = tau[t] + alpha * delta
                    c_new = term(t, cand)
                    if c_new[0] <= costs[t] + 1e-4 * alpha * slope:
                        step = (cand, c_new)
                        break
                    alpha *= 0.5
                if step is None:
                    mus[t] = min(mus[t] * 10.0, 1e6)
                else:
                    mus[t] = max(mus[t] * 0.5, 1e-6)
            if step is None:
                # gradient step failed or the point is gradient-flat: a plateau
                # top or the data kink; probe the negative-curvature direction
                step = escape_step(t)
                if step is None:
                    continue
            tau[t], (costs[t], grads[t], hessians[t]) = step[0], step[1]
            moved = True
        trace.append(float(costs.sum()))
        if not moved:
            break
        if flat and float(np.linalg.norm(grads)) < grad_tol:
            break
    return PlanResult(
        raw=tau_hat,
        optimized=tau,
        objective_trace=trace,
        final_grad_norm=float(np.linalg.norm(grads)),
        iterations=len(trace) - 1,
    )


def heading_along(tau: np.ndarray, default_yaw: float = 0.0) -> np.ndarray:
    """Per-waypoint heading from finite differences; falls back to the last one."""
    tau = np.asarray(tau, dtype=float)
    t_p = tau.shape[0]
    yaws = np.empty(t_p)
    prev = default_yaw
    for t in range(t_p):
        ref = tau[t + 1] - tau[t] if t + 1 < t_p else tau[t] - tau[t - 1] if t_p > 1 else None
        if ref is not None and float(np.hypot(*ref)) > 1e-9:
            prev = math.atan2(ref[1], ref[0])
        yaws[t] = prev
    return yaws


def collision_loss(
    tau: np.ndarray,
    agent_boxes: list,
    ego_w: float,
    ego_l: float,
    pairs=((1.0, 0.0), (0.4, 0.5), (0.1, 1.0)),
    default_yaw: float = 0.0,
) -> float:
    """Dilated-ego IoU penalty against forecast agent boxes.

    agent_boxes[t] holds the boxes forecast for waypoint step t; each (w, d)
    pair adds w * sum IoU(ego box dilated by d, agent box).
    """
    tau = np.asarray(tau, dtype=float)
    yaws = heading_along(tau, default_yaw)
    total = 0.0
    for weight, delta in pairs:
        for t in range(tau.shape[0]):
            ego = Box2d(tau[t, 0], tau[t, 1], ego_w + delta, ego_l + delta, yaws[t])
            for b in agent_boxes[t]:
                total += weight * rotated_iou(ego, b)
    return float(total)
