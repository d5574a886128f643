"""Receding-horizon improvement with feasibility-gated splicing.

A sliding window [k*step, k*step + horizon] of the current plan is
re-optimized with fixed boundary states and a free window duration, the
solution is spliced into a candidate by re-assigning controls and forward
integrating them from the initial states, and the candidate replaces the
current plan only if it passes a dense feasibility re-check and does not
increase the cost.  The recorded cost sequence is therefore non-increasing
by construction, and the shared arrival time never grows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .admm import NadmmConfig, WindowSolution, nadmm_improve_window
from .errors import SpliceMismatch, WindowFailed
from .model import (AugmentedState, ControlInput, ModelParams, Trajectory,
                    Workspace, cell_center, rk4_step, swept_cells,
                    trajectory_cost, wrap_angle)
from .arrival import SyncPlan
from .nlp import solve_local
from .transcription import SegmentSpec, transcribe


@dataclass
class ImproveConfig:
    horizon: float
    step: float
    mode: str = "distributed"
    n_steps: int = 16
    nadmm: NadmmConfig = field(default_factory=NadmmConfig)
    feas_tol: float = 0.05
    goal_tol: float = 0.05
    splice_tol: float = 1e-3
    t_min_frac: float = 0.2
    d_min: float | None = None
    time_weight: float = 0.0
    obstacle_band: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.step <= self.horizon:
            raise ValueError("need 0 < step <= horizon")
        if self.mode not in ("distributed", "centralized"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class IterationStats:
    k: int
    mode: str
    t_start: float
    window: float
    window_solved: float | None
    accepted: bool
    cost: float
    t_f: float
    wall_time: float


def dense_cost(plan: SyncPlan) -> float:
    return sum(trajectory_cost(t) for t in plan.trajectories)


def _sample_dt(plan: SyncPlan) -> float:
    t = plan.trajectories[0].times_array()
    if len(t) < 2:
        raise ValueError("plan has no motion to improve")
    return float(t[1] - t[0])


def _slice_window(traj: Trajectory, i0: int, i1: int) -> Trajectory:
    t0 = traj.samples[i0][0]
    part = [(t - t0, s, u) for t, s, u in traj.samples[i0:i1 + 1]]
    return Trajectory(part)


def _control_schedule(traj: Trajectory):
    """Zero-order-hold lookup of a trajectory's stored controls."""
    times = traj.times_array()
    controls = traj.controls_array()

    def at(t: float) -> np.ndarray:
        idx = int(np.clip(np.searchsorted(times, t + 1e-12, side="right") - 1,
                          0, len(controls) - 1))
        return controls[idx]
    return at


def integrate_controls(x0: AugmentedState, control_at, duration: float,
                       dt: float, params: ModelParams,
                       switch_times: list[float] | None = None) -> Trajectory:
    """RK4 rollout of a zero-order-hold schedule, sampled on a uniform grid.

    The integration grid is refined at every control switch time so that no
    step straddles a discontinuity; samples are only recorded at the
    uniform grid points, which all agents share exactly.
    """
    n = max(1, int(round(duration / dt)))
    grid = [duration * k / n for k in range(n + 1)]
    knots = sorted(set(grid) | {t for t in (switch_times or [])
                                if 1e-12 < t < duration - 1e-12})
    merged = [knots[0]]
    for t in knots[1:]:
        if t - merged[-1] > 1e-9:
            merged.append(t)
    if merged[-1] < duration - 1e-9:
        merged.append(duration)

    samples = [(0.0, x0, ControlInput.from_array(control_at(0.0)))]
    state = x0.as_array()
    gi = 1
    for t0, t1 in zip(merged, merged[1:]):
        u = control_at(t0 + 1e-12)
        state = rk4_step(state, u, t1 - t0, params.wheelbase)
        state[2] = wrap_angle(state[2])
        if gi <= n and abs(t1 - grid[gi]) <= 1e-9:
            samples.append((grid[gi], AugmentedState.from_array(state),
                            ControlInput.from_array(control_at(min(grid[gi], duration - 1e-12)))))
            gi += 1
    return Trajectory(samples)


def splice_candidate(current: SyncPlan, window: WindowSolution, t0: float,
                     window_len: float, params: ModelParams,
                     cfg: ImproveConfig) -> SyncPlan:
    """Candidate plan: window controls inserted, the tail shifted earlier.

    Controls are the current ones on [0, t0), the window's zero-order-hold
    controls on [t0, t0 + T*], and the current ones shifted by
    ``window_len - T*`` afterwards.  States are re-generated by forward
    integration from t = 0, so transcription error cannot leak into an
    accepted plan unchecked.
    """
    t_star = window.duration
    delta_t = window_len - t_star
    if t_star > window_len + 1e-9:
        raise SpliceMismatch("window solution longer than the window")
    dt = _sample_dt(current)
    n_steps = window.states[0].shape[0] - 1
    new_tf = current.t_f - delta_t
    trajs = []
    for i, traj in enumerate(current.trajectories):
        # boundary consistency of the window solution against the plan
        s_at = traj.state_at(t0).as_array()
        e_at = traj.state_at(t0 + window_len).as_array()
        for ref, got in ((s_at, window.states[i][0]), (e_at, window.states[i][-1])):
            err = np.abs(ref - got)
            err[2] = abs(wrap_angle(ref[2] - got[2]))
            if err.max() > cfg.splice_tol:
                raise SpliceMismatch(
                    f"agent {i} window boundary deviates by {err.max():.2e}")
        cur_controls = _control_schedule(traj)
        h_star = t_star / n_steps
        controls_w = window.controls[i]

        def control_at(t: float, cur=cur_controls, cw=controls_w, hs=h_star):
            if t < t0 - 1e-12:
                return cur(t)
            if t <= t0 + t_star + 1e-12:
                idx = int(np.clip(math.floor((t - t0) / hs), 0, n_steps - 1))
                return cw[idx]
            return cur(t + delta_t)

        times = traj.times_array()
        switches = [float(t) for t in times[times < t0 - 1e-12]]
        switches += [t0 + j * h_star for j in range(n_steps + 1)]
        switches += [float(t) - delta_t for t in times[times > t0 + window_len + 1e-12]]
        x0 = traj.samples[0][1]
        trajs.append(integrate_controls(x0, control_at, new_tf, dt, params,
                                        switch_times=switches))
    return SyncPlan(trajs, new_tf, list(current.paddings))


def check_plan_feasible(plan: SyncPlan, reference: SyncPlan, ws: Workspace,
                        params: ModelParams, cfg: ImproveConfig) -> list[str]:
    """Dense re-check: boxes, clearances, obstacles, endpoints, simultaneity."""
    problems = []
    d_min = cfg.d_min if cfg.d_min is not None else 2.0 * params.footprint_radius
    durations = {t.duration for t in plan.trajectories}
    if len(durations) != 1:
        problems.append("agents do not share one arrival time")
    lo, hi = params.state_lower(), params.state_upper()
    pos_arrays = []
    for i, traj in enumerate(plan.trajectories):
        arr = traj.states_array()
        pos_arrays.append(arr[:, :2])
        box = np.concatenate([np.maximum(lo[3:] - arr[:, 3:], 0.0).ravel(),
                              np.maximum(arr[:, 3:] - hi[3:], 0.0).ravel()])
        if box.size and box.max() > cfg.feas_tol:
            problems.append(f"agent {i} leaves its state box by {box.max():.3g}")
        ref_end = reference.trajectories[i].samples[-1][1].as_array()
        end = arr[-1]
        pos_err = float(np.hypot(end[0] - ref_end[0], end[1] - ref_end[1]))
        ang_err = abs(wrap_angle(end[2] - ref_end[2]))
        if pos_err > cfg.goal_tol or ang_err > 4.0 * cfg.goal_tol:
            problems.append(f"agent {i} misses its endpoint by {pos_err:.3g}")
        try:
            swept_cells(traj, params, ws)
        except Exception as exc:  # OutOfWorkspace
            problems.append(f"agent {i}: {exc}")
    n = min(len(a) for a in pos_arrays)
    for i in range(len(pos_arrays)):
        for j in range(i + 1, len(pos_arrays)):
            d = np.hypot(*(pos_arrays[i][:n] - pos_arrays[j][:n]).T)
            worst = float(d.min())
            if worst < d_min - cfg.feas_tol:
                problems.append(
                    f"agents {i},{j} clearance {worst:.3g} below {d_min:.3g}")
    return problems


def accept_candidate(candidate: SyncPlan, current: SyncPlan, ws: Workspace,
                     params: ModelParams, cfg: ImproveConfig) -> tuple[SyncPlan, bool]:
    """Candidate iff densely feasible and no costlier; otherwise current."""
    if check_plan_feasible(candidate, current, ws, params, cfg):
        return current, False
    if dense_cost(candidate) > dense_cost(current):
        return current, False
    return candidate, True


def improve(plan: SyncPlan, ws: Workspace, params: ModelParams,
            cfg: ImproveConfig) -> tuple[SyncPlan, list[IterationStats]]:
    """Slide the window across the plan, splicing accepted improvements."""
    current = plan
    stats: list[IterationStats] = []
    dt = _sample_dt(plan)
    obstacle_centers = np.array([cell_center(c, params.cell_size)
                                 for c in sorted(ws.obstacles)]) if ws.obstacles else None
    pos_lo = (0.5 * params.cell_size, 0.5 * params.cell_size)
    pos_hi = (ws.width * params.cell_size - 0.5 * params.cell_size,
              ws.height * params.cell_size - 0.5 * params.cell_size)
    k = 0
    t_curr = 0.0
    while t_curr + cfg.horizon <= current.t_f + 1e-9:
        started = time.perf_counter()
        i0 = int(round(t_curr / dt))
        i1 = int(round(min(t_curr + cfg.horizon, current.t_f) / dt))
        t0 = i0 * dt
        window_len = (i1 - i0) * dt
        warm = [_slice_window(t, i0, i1) for t in current.trajectories]
        starts = [w.samples[0][1] for w in warm]
        ends = [w.samples[-1][1] for w in warm]
        pairs = [(i, j) for i in range(len(warm)) for j in range(i + 1, len(warm))]
        spec = SegmentSpec(
            starts=starts, ends=ends, n_steps=cfg.n_steps,
            t_min=max(cfg.t_min_frac * window_len, 2 * dt),
            t_max=window_len, params=params,
            collision_pairs=pairs,
            d_min=cfg.d_min if cfg.d_min is not None else 2.0 * params.footprint_radius,
            obstacle_centers=obstacle_centers,
            obstacle_band=cfg.obstacle_band,
            pos_lower=pos_lo, pos_upper=pos_hi,
            time_weight=cfg.time_weight,
        )
        solution = _solve_window(spec, warm, cfg)
        accepted = False
        solved_t = None
        if solution is not None:
            solved_t = solution.duration
            try:
                candidate = splice_candidate(current, solution, t0, window_len,
                                             params, cfg)
                current, accepted = accept_candidate(candidate, current, ws,
                                                     params, cfg)
            except SpliceMismatch:
                pass
        stats.append(IterationStats(
            k=k, mode=cfg.mode, t_start=t0, window=window_len,
            window_solved=solved_t, accepted=accepted,
            cost=dense_cost(current), t_f=current.t_f,
            wall_time=time.perf_counter() - started))
        k += 1
        t_curr += cfg.step
    return current, stats


def _solve_window(spec: SegmentSpec, warm, cfg: ImproveConfig) -> WindowSolution | None:
    """One window solve in the configured mode; None when it failed."""
    if cfg.mode == "distributed":
        try:
            return nadmm_improve_window(spec, warm, cfg.nadmm)
        except WindowFailed:
            return None
    nlp = transcribe(spec, warm)
    sol = solve_local(nlp, nlp.meta["warm"], tol=cfg.nadmm.local_tol,
                      max_outer=cfg.nadmm.local_max_outer,
                      max_inner=cfg.nadmm.local_max_inner)
    if sol.max_violation > 10.0 * cfg.nadmm.local_tol:
        return None
    lay = nlp.meta["layout"]
    states = [lay.states(sol.x, i).copy() for i in range(spec.n_agents)]
    controls = [lay.controls(sol.x, i).copy() for i in range(spec.n_agents)]
    return WindowSolution(states, controls, float(sol.x[lay.t_index]), [])
