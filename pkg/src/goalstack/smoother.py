"""Non-linear target-trajectory smoother.

Minimizes  c(x, x~) = lam_xy * ||x - x~||_2  +  lam_goal * ||x_T - x~_T||_2
                      + sum_phi w_phi * phi(x)
over trajectories x (T x 2), where the kinematic penalty set Phi holds five
terms: jerk, curvature, curvature rate, acceleration and lateral acceleration.

Discretizations (dt = step, all sums of squares):
    v_t  = (x_{t+1} - x_t) / dt
    a_t  = (x_{t+1} - 2 x_t + x_{t-1}) / dt^2
    j_t  = (x_{t+3} - 3 x_{t+2} + 3 x_{t+1} - x_t) / dt^3
    kappa_t = (v_t x a_t) / max(||v_t||, 1e-3)^3
    rate_t  = kappa_{t+1} - kappa_t
    lat_t   = kappa_t * ||v_t||^2

The optimizer is Gauss-Newton on the residual families with a gradient-descent
fallback and Armijo backtracking (factor 0.5, c1 = 1e-4). The trajectory is
parameterized by multiple shooting: segments of 4 steps, where each segment
after the first carries 3 duplicated rows of its predecessor's boundary
stencil so every finite-difference window is segment-local; quadratic
continuity penalties (weight 1e3) tie the duplicates to the real rows. A
plain-space polish phase (single segment) runs inside the same iteration
budget, and the best of {target, assembled, polished} under the plain cost is
returned, so c(x*) <= c(x~) always holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import require

PHI_NAMES = ("jerk", "curvature", "curvature_rate", "acceleration", "lateral_acceleration")

SPEED_FLOOR = 1e-3
ARMIJO_C1 = 1e-4
ARMIJO_FACTOR = 0.5


@dataclass
class SmootherProblem:
    target: np.ndarray  # (T, 2)
    dt: float
    lam_xy: float = 1.0
    lam_goal: float = 1.0
    phi_weights: np.ndarray = field(default_factory=lambda: np.full(5, 0.1))
    segment_len: int = 4
    continuity_weight: float = 1e3
    tol: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        self.phi_weights = np.asarray(self.phi_weights, dtype=float)
        require(self.target.ndim == 2 and self.target.shape[1] == 2, "target-smoother", "SmootherProblem", "target must be T x 2")
        require(self.target.shape[0] >= 4, "target-smoother", "SmootherProblem", "need T >= 4")
        require(bool(np.isfinite(self.target).all()), "target-smoother", "SmootherProblem", "non-finite target")
        require(self.dt > 0, "target-smoother", "SmootherProblem", "dt must be positive")
        require(self.lam_xy >= 0 and self.lam_goal >= 0, "target-smoother", "SmootherProblem", "weights must be >= 0")
        require(self.phi_weights.shape == (5,) and bool((self.phi_weights >= 0).all()), "target-smoother", "SmootherProblem", "need 5 nonnegative phi weights")


def _linear_family(x: np.ndarray, dt: float, coeffs, power: int):
    """Residuals r_i = sum_k coeffs[k] * x[i+k] / dt^power with their Jacobian."""
    m = x.shape[0]
    wlen = len(coeffs)
    k = m - wlen + 1
    if k <= 0:
        return np.zeros(0), np.zeros((0, 2 * m)), wlen
    scale = dt ** (-power)
    r = scale * sum(c * x[i : i + k] for i, c in enumerate(coeffs))
    J = np.zeros((2 * k, 2 * m))
    rows = np.arange(k)
    for i, c in enumerate(coeffs):
        for comp in range(2):
            J[2 * rows + comp, 2 * (rows + i) + comp] += c * scale
    return r.ravel(), J, wlen


def _curvature_families(x: np.ndarray, dt: float):
    """kappa, curvature-rate and lateral-acceleration residuals with Jacobians."""
    m = x.shape[0]
    k = m - 2
    if k <= 0:
        z = np.zeros(0)
        zj = np.zeros((0, 2 * m))
        return (z, zj, 3), (z, zj, 4), (z, zj, 3)
    v = (x[1:] - x[:-1]) / dt
    a = (x[2:] - 2 * x[1:-1] + x[:-2]) / dt**2  # aligned with t = 1..m-2
    vt = v[1:]  # forward difference at t = 1..m-2
    s = np.linalg.norm(vt, axis=1)
    sh = np.maximum(s, SPEED_FLOOR)
    cross = vt[:, 0] * a[:, 1] - vt[:, 1] * a[:, 0]
    kappa = cross / sh**3

    active = s > SPEED_FLOOR
    safe_s = np.where(s > 0, s, 1.0)
    unit_v = np.where(active[:, None], vt / safe_s[:, None], 0.0)
    dk_dv = np.stack([a[:, 1], -a[:, 0]], axis=1) / sh[:, None] ** 3 - (3 * cross / sh**4)[:, None] * unit_v
    dk_da = np.stack([-vt[:, 1], vt[:, 0]], axis=1) / sh[:, None] ** 3

    lat = kappa * s**2
    dl_dv = (s**2)[:, None] * dk_dv + 2 * kappa[:, None] * vt
    dl_da = (s**2)[:, None] * dk_da

    def chain(dv, da):
        J = np.zeros((k, 2 * m))
        idx = np.arange(k)  # residual i sits at t = i + 1
        for comp in range(2):
            J[idx, 2 * (idx + 2) + comp] += dv[:, comp] / dt + da[:, comp] / dt**2
            J[idx, 2 * (idx + 1) + comp] += -dv[:, comp] / dt - 2 * da[:, comp] / dt**2
            J[idx, 2 * idx + comp] += da[:, comp] / dt**2
        return J

    Jk = chain(dk_dv, dk_da)
    Jl = chain(dl_dv, dl_da)
    rate = kappa[1:] - kappa[:-1]
    Jr = Jk[1:] - Jk[:-1]
    return (kappa, Jk, 3), (rate, Jr, 4), (lat, Jl, 3)


def _families(x: np.ndarray, dt: float) -> dict:
    """All five residual families as name -> (residuals, jacobian, window_len)."""
    jerk = _linear_family(x, dt, (-1.0, 3.0, -3.0, 1.0), 3)
    accel = _linear_family(x, dt, (1.0, -2.0, 1.0), 2)
    kappa, rate, lat = _curvature_families(x, dt)
    return {
        "jerk": jerk,
        "curvature": kappa,
        "curvature_rate": rate,
        "acceleration": accel,
        "lateral_acceleration": lat,
    }


_WINDOW_LEN = {"jerk": 4, "curvature": 3, "curvature_rate": 4, "acceleration": 3, "lateral_acceleration": 3}
_TWO_COMPONENT = ("jerk", "acceleration")


def _residual_families(x: np.ndarray, dt: float) -> dict:
    """Residuals only (no Jacobians); the cheap path for cost evaluation."""
    m = x.shape[0]
    out = {}
    if m >= 4:
        out["jerk"] = ((x[3:] - 3 * x[2:-1] + 3 * x[1:-2] - x[:-3]) / dt**3).ravel()
    else:
        out["jerk"] = np.zeros(0)
    if m >= 3:
        a = (x[2:] - 2 * x[1:-1] + x[:-2]) / dt**2
        out["acceleration"] = a.ravel()
        vt = (x[2:] - x[1:-1]) / dt
        s = np.linalg.norm(vt, axis=1)
        sh = np.maximum(s, SPEED_FLOOR)
        cross = vt[:, 0] * a[:, 1] - vt[:, 1] * a[:, 0]
        kappa = cross / sh**3
        out["curvature"] = kappa
        out["curvature_rate"] = kappa[1:] - kappa[:-1]
        out["lateral_acceleration"] = kappa * s**2
    else:
        z = np.zeros(0)
        out["acceleration"] = z
        out["curvature"] = z
        out["curvature_rate"] = z
        out["lateral_acceleration"] = z
    return out


def kinematic_costs(x: np.ndarray, dt: float) -> dict:
    """The five kinematic penalty values (sums of squared residuals)."""
    x = np.asarray(x, dtype=float)
    require(x.ndim == 2 and x.shape[1] == 2 and x.shape[0] >= 4, "target-smoother", "kinematic_costs", "need a T x 2 trajectory with T >= 4")
    require(dt > 0, "target-smoother", "kinematic_costs", "dt must be positive")
    fams = _residual_families(x, dt)
    return {name: float(r @ r) for name, r in fams.items()}


def _norm_term(u: np.ndarray, lam: float):
    """cost, grad, Hessian of lam * ||u||_2; subgradient 0 at the kink."""
    n = u.size
    nu = float(np.linalg.norm(u))
    if lam == 0.0 or nu == 0.0:
        return 0.0, np.zeros(n), np.zeros((n, n))
    g = lam * u / nu
    H = lam * (np.eye(n) / nu - np.outer(u, u) / nu**3)
    return lam * nu, g, H


def smoother_cost(x: np.ndarray, problem: SmootherProblem) -> float:
    x = np.asarray(x, dtype=float)
    c = problem.lam_xy * float(np.linalg.norm(x - problem.target))
    c += problem.lam_goal * float(np.linalg.norm(x[-1] - problem.target[-1]))
    fams = _residual_families(x, problem.dt)
    for w, name in zip(problem.phi_weights, PHI_NAMES):
        r = fams[name]
        c += float(w * (r @ r))
    return c


def smoother_cost_grad(x: np.ndarray, problem: SmootherProblem) -> tuple[float, np.ndarray]:
    """Plain cost and its analytic gradient (T, 2)."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    cost = 0.0
    grad = np.zeros(2 * T)
    u = (x - problem.target).ravel()
    c0, g0, _ = _norm_term(u, problem.lam_xy)
    cost += c0
    grad += g0
    ug = x[-1] - problem.target[-1]
    cg, gg, _ = _norm_term(ug, problem.lam_goal)
    cost += cg
    grad[-2:] += gg
    fams = _families(x, problem.dt)
    for w, name in zip(problem.phi_weights, PHI_NAMES):
        r, J, _ = fams[name]
        cost += float(w * (r @ r))
        grad += 2.0 * w * (J.T @ r)
    return cost, grad.reshape(T, 2)


class _ShootingSpace:
    """Index bookkeeping for segment-wise variables with duplicated boundary rows."""

    def __init__(self, T: int, seg_len: int):
        self.T = T
        self.seg_len = seg_len
        self.n_seg = max(1, -(-T // seg_len))
        self.n_ghost = 3 * (self.n_seg - 1)
        self.n_rows = T + self.n_ghost

    def pack(self, x: np.ndarray) -> np.ndarray:
        rows = [x]
        for j in range(1, self.n_seg):
            rows.append(x[self.seg_len * j - 3 : self.seg_len * j])
        return np.concatenate(rows, axis=0)

    def assemble(self, z: np.ndarray) -> np.ndarray:
        return z[: self.T].copy()

    def segment_rows(self, j: int) -> tuple[list[int], int]:
        """(global z-row indices of the extended segment, index of first own row)."""
        lo = self.seg_len * j
        hi = min(self.seg_len * (j + 1), self.T)
        own = list(range(lo, hi))
        if j == 0:
            return own, 0
        ghosts = [self.T + 3 * (j - 1) + k for k in range(3)]
        return ghosts + own, 3


def _objective_cost(z: np.ndarray, problem: SmootherProblem, space: _ShootingSpace) -> float:
    """Shooting objective, residual path only (used by the line search)."""
    x_own = z[: space.T]
    cost = problem.lam_xy * float(np.linalg.norm(x_own - problem.target))
    cost += problem.lam_goal * float(np.linalg.norm(x_own[-1] - problem.target[-1]))
    for j in range(space.n_seg):
        rows, own_start = space.segment_rows(j)
        fams = _residual_families(z[rows], problem.dt)
        for w, name in zip(problem.phi_weights, PHI_NAMES):
            if w == 0.0:
                continue
            r = fams[name]
            if r.size == 0:
                continue
            per = 2 if name in _TWO_COMPONENT else 1
            keep = (np.arange(r.size // per) + _WINDOW_LEN[name] - 1) >= own_start
            if per == 2:
                keep = np.repeat(keep, 2)
            rr = r[keep]
            cost += float(w * (rr @ rr))
    if space.n_seg > 1 and problem.continuity_weight > 0:
        for j in range(1, space.n_seg):
            ghosts = slice(space.T + 3 * (j - 1), space.T + 3 * j)
            actual = slice(space.seg_len * j - 3, space.seg_len * j)
            d = z[ghosts] - z[actual]
            cost += float(problem.continuity_weight * (d * d).sum())
    return cost


def _eval_objective(z: np.ndarray, problem: SmootherProblem, space: _ShootingSpace):
    """Cost, gradient and Gauss-Newton Hessian of the shooting objective."""
    nz = space.n_rows
    cost = 0.0
    grad = np.zeros(2 * nz)
    H = np.zeros((2 * nz, 2 * nz))
    x_own = z[: space.T]

    u = (x_own - problem.target).ravel()
    c0, g0, H0 = _norm_term(u, problem.lam_xy)
    cost += c0
    grad[: 2 * space.T] += g0
    H[: 2 * space.T, : 2 * space.T] += H0
    ug = x_own[-1] - problem.target[-1]
    cg, gg, Hg = _norm_term(ug, problem.lam_goal)
    cost += cg
    sl = slice(2 * space.T - 2, 2 * space.T)
    grad[sl] += gg
    H[sl, sl] += Hg

    for j in range(space.n_seg):
        rows, own_start = space.segment_rows(j)
        ext = z[rows]
        fams = _families(ext, problem.dt)
        cols = np.empty(2 * len(rows), dtype=int)
        cols[0::2] = 2 * np.asarray(rows)
        cols[1::2] = 2 * np.asarray(rows) + 1
        for w, name in zip(problem.phi_weights, PHI_NAMES):
            if w == 0.0:
                continue
            r, J, wlen = fams[name]
            if r.size == 0:
                continue
            n_res = J.shape[0] // (2 if name in ("jerk", "acceleration") else 1)
            # keep residuals whose window's last row is an own row
            last = np.arange(n_res) + wlen - 1
            keep = last >= own_start
            if name in ("jerk", "acceleration"):
                keep = np.repeat(keep, 2)
            r, J = r[keep], J[keep]
            if r.size == 0:
                continue
            cost += float(w * (r @ r))
            Jg = np.zeros((J.shape[0], 2 * nz))
            Jg[:, cols] = J
            grad += 2.0 * w * (Jg.T @ r)
            H += 2.0 * w * (Jg.T @ Jg)

    if space.n_seg > 1 and problem.continuity_weight > 0:
        w = problem.continuity_weight
        for j in range(1, space.n_seg):
            ghosts = [space.T + 3 * (j - 1) + k for k in range(3)]
            actual = list(range(space.seg_len * j - 3, space.seg_len * j))
            d = z[ghosts] - z[actual]
            cost += float(w * (d * d).sum())
            for g_row, a_row, dd in zip(ghosts, actual, d):
                for comp in range(2):
                    grad[2 * g_row + comp] += 2 * w * dd[comp]
                    grad[2 * a_row + comp] -= 2 * w * dd[comp]
                    for r1, s1 in ((g_row, 1.0), (a_row, -1.0)):
                        for r2, s2 in ((g_row, 1.0), (a_row, -1.0)):
                            H[2 * r1 + comp, 2 * r2 + comp] += 2 * w * s1 * s2
    return cost, grad, H


def _armijo(z, cost, grad, direction, eval_cost, max_backtracks=40):
    """Backtracking line search; returns (new_z, new_cost) or None."""
    slope = float(grad @ direction.ravel())
    if slope >= 0.0:
        return None
    alpha = 1.0
    for _ in range(max_backtracks):
        cand = z + alpha * direction
        c = eval_cost(cand)
        if c <= cost + ARMIJO_C1 * alpha * slope:
            return cand, c
        alpha *= ARMIJO_FACTOR
    return None


KINK_TOL = 1e-7


def _solve_gn(H: np.ndarray, grad: np.ndarray, pins: list[int]) -> np.ndarray | None:
    """Gauss-Newton direction, optionally with pinned (frozen) coordinates."""
    n = H.shape[0]
    free = np.setdiff1d(np.arange(n), pins)
    if free.size == 0:
        return None
    Hf = H[np.ix_(free, free)]
    ridge = 1e-10 * max(1.0, float(np.trace(Hf)) / free.size)
    try:
        df = np.linalg.solve(Hf + ridge * np.eye(free.size), -grad[free])
    except np.linalg.LinAlgError:
        return None
    delta = np.zeros(n)
    delta[free] = df
    return delta


def _minimize(z0: np.ndarray, problem: SmootherProblem, space: _ShootingSpace, budget: int):
    """Gauss-Newton with gradient fallback; returns (z, iterations_used, trace).

    The exact (non-squared) goal norm is non-smooth where the endpoint meets
    the target; once there, a candidate step with the endpoint coordinates
    frozen lets the interior keep improving instead of stalling on the kink.
    """

    def eval_cost(z):
        return _objective_cost(z, problem, space)

    z = z0.copy()
    cost = eval_cost(z)  # single source of truth for the descent comparison
    _, grad, H = _eval_objective(z, problem, space)
    trace = [cost]
    used = 0
    while used < budget:
        used += 1
        # snap the endpoint onto the goal kink when that lowers the cost; at the
        # exact kink the goal term contributes subgradient 0 and no curvature,
        # so subsequent steps are not crippled by a 1/||u|| Hessian
        if problem.lam_goal > 0:
            un = float(np.linalg.norm(z[space.T - 1] - problem.target[-1]))
            if 0.0 < un < KINK_TOL:
                snapped = z.copy()
                snapped[space.T - 1] = problem.target[-1]
                c_snap = eval_cost(snapped)
                if c_snap <= cost:
                    z, cost = snapped, c_snap
                    _, grad, H = _eval_objective(z, problem, space)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-12:
            break
        pins: list[int] = []
        if problem.lam_goal > 0 and bool(np.all(z[space.T - 1] == problem.target[-1])):
            pins = [2 * (space.T - 1), 2 * (space.T - 1) + 1]
        fallback = -grad / max(1.0, gnorm)
        step = None
        if pins:
            # on the kink: race the pinned and unpinned moves, keep the better
            directions = []
            for pin_set in (pins, []):
                d = _solve_gn(H, grad, pin_set)
                if d is not None:
                    directions.append(d)
            pinned_fb = fallback.copy()
            pinned_fb[pins] = 0.0
            directions += [pinned_fb, fallback]
            for direction in directions:
                cand = _armijo(z, cost, grad, direction.reshape(-1, 2), eval_cost)
                if cand is not None and (step is None or cand[1] < step[1]):
                    step = cand
        else:
            d = _solve_gn(H, grad, [])
            if d is not None:
                step = _armijo(z, cost, grad, d.reshape(-1, 2), eval_cost)
            if step is None:
                step = _armijo(z, cost, grad, fallback.reshape(-1, 2), eval_cost)
        if step is None:
            break
        z, new_cost = step
        converged = abs(cost - new_cost) <= problem.tol * max(1.0, abs(cost))
        cost = new_cost
        trace.append(cost)
        if converged:
            break
        _, grad, H = _eval_objective(z, problem, space)
    return z, used, trace


@dataclass(frozen=True)
class SmootherResult:
    trajectory: np.ndarray
    cost_before: float
    cost_after: float
    iterations: int
    phase_traces: tuple  # per optimizer phase, each non-increasing


def smooth_detailed(problem: SmootherProblem) -> SmootherResult:
    target = problem.target
    cost_target = smoother_cost(target, problem)
    used = 0
    traces = []

    space = _ShootingSpace(target.shape[0], problem.segment_len)
    x_best = target
    if space.n_seg > 1:
        z, took, trace = _minimize(space.pack(target), problem, space, problem.max_iters)
        used += took
        traces.append(tuple(trace))
        assembled = space.assemble(z)
        if smoother_cost(assembled, problem) <= cost_target:
            x_best = assembled

    plain = _ShootingSpace(target.shape[0], target.shape[0])
    z, took, trace = _minimize(x_best.copy(), problem, plain, max(0, problem.max_iters - used))
    used += took
    traces.append(tuple(trace))
    polished = plain.assemble(z)

    candidates = [target, x_best, polished]
    costs = [smoother_cost(c, problem) for c in candidates]
    best = int(np.argmin(costs))
    return SmootherResult(candidates[best].copy(), cost_target, costs[best], used, tuple(traces))


def smooth(problem: SmootherProblem) -> np.ndarray:
    """Optimized target trajectory x*; c(x*, x~) <= c(x~, x~) is guaranteed."""
    return smooth_detailed(problem).trajectory
