"""Direct transcription of trajectory windows into smooth NLPs.

Trapezoidal collocation with a zero-order hold on the controls and a free
terminal time: the step is ``h = T/N`` with ``T`` itself a decision
variable.  The centralized problem stacks all agents and shares one ``T``;
the per-agent problem owns its trajectory, controls and terminal time and
additionally proposes trajectories for the other agents, which only enter
collision constraints and the consensus penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SpecError
from .model import (CONTROL_DIM, STATE_DIM, AugmentedState, ModelParams,
                    Trajectory, dynamics_batch, dynamics_jacobians, wrap_angle)
from .nlp import NlpProblem

BIG = 1e9


@dataclass
class SegmentSpec:
    """Fixed-endpoint multi-agent window with a free duration in [t_min, t_max]."""

    starts: list[AugmentedState]
    ends: list[AugmentedState]
    n_steps: int
    t_min: float
    t_max: float
    params: ModelParams
    collision_pairs: list[tuple[int, int]] = field(default_factory=list)
    d_min: float | None = None
    obstacle_centers: np.ndarray | None = None
    obstacle_clearance: float | None = None
    obstacle_band: float = 2.0
    pos_lower: tuple[float, float] | None = None
    pos_upper: tuple[float, float] | None = None
    time_weight: float = 0.0

    def __post_init__(self):
        if len(self.starts) != len(self.ends):
            raise SpecError("starts and ends must pair up")
        if self.n_steps < 2:
            raise SpecError("need at least two steps")
        if not (0 < self.t_min <= self.t_max):
            raise SpecError("need 0 < t_min <= t_max")
        if self.d_min is None:
            self.d_min = 2.0 * self.params.footprint_radius
        if self.obstacle_clearance is None:
            self.obstacle_clearance = self.params.footprint_radius + 0.5 * self.params.cell_size

    @property
    def n_agents(self) -> int:
        return len(self.starts)


def resample_knots(traj: Trajectory, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate a trajectory onto N+1 state knots and N held controls.

    Headings are unwrapped so the knot values are continuous in time.
    """
    times = traj.times_array()
    states = traj.states_array().copy()
    states[:, 2] = np.unwrap(states[:, 2])
    controls = traj.controls_array()
    duration = times[-1] if len(times) > 1 else 1.0
    knot_t = np.linspace(0.0, duration, n_steps + 1)
    X = np.column_stack([np.interp(knot_t, times, states[:, c]) for c in range(STATE_DIM)])
    # zero-order hold: control of the sample interval containing each knot start
    idx = np.clip(np.searchsorted(times, knot_t[:-1], side="right") - 1, 0, len(times) - 1)
    U = controls[idx]
    return X, U


# -- layouts ----------------------------------------------------------------


@dataclass(frozen=True)
class CentralLayout:
    """[X_1, U_1, ..., X_K, U_K, T] with X row-major (N+1, 7), U (N, 2)."""

    n_agents: int
    n_steps: int

    @property
    def state_block(self) -> int:
        return STATE_DIM * (self.n_steps + 1)

    @property
    def control_block(self) -> int:
        return CONTROL_DIM * self.n_steps

    def x_offset(self, i: int) -> int:
        return i * (self.state_block + self.control_block)

    def u_offset(self, i: int) -> int:
        return self.x_offset(i) + self.state_block

    @property
    def t_index(self) -> int:
        return self.n_agents * (self.state_block + self.control_block)

    @property
    def dim(self) -> int:
        return self.t_index + 1

    def states(self, vec: np.ndarray, i: int) -> np.ndarray:
        off = self.x_offset(i)
        return vec[off:off + self.state_block].reshape(self.n_steps + 1, STATE_DIM)

    def controls(self, vec: np.ndarray, i: int) -> np.ndarray:
        off = self.u_offset(i)
        return vec[off:off + self.control_block].reshape(self.n_steps, CONTROL_DIM)

    def pack(self, Xs: list[np.ndarray], Us: list[np.ndarray], T: float) -> np.ndarray:
        vec = np.empty(self.dim)
        for i, (X, U) in enumerate(zip(Xs, Us)):
            vec[self.x_offset(i):self.u_offset(i)] = X.ravel()
            vec[self.u_offset(i):self.u_offset(i) + self.control_block] = U.ravel()
        vec[self.t_index] = T
        return vec


@dataclass(frozen=True)
class ConsensusLayout:
    """Global consensus vector: [X_1, ..., X_K, t_f], no controls."""

    n_agents: int
    n_steps: int

    @property
    def state_block(self) -> int:
        return STATE_DIM * (self.n_steps + 1)

    @property
    def t_index(self) -> int:
        return self.n_agents * self.state_block

    @property
    def dim(self) -> int:
        return self.t_index + 1

    def block(self, vec: np.ndarray, i: int) -> np.ndarray:
        off = i * self.state_block
        return vec[off:off + self.state_block].reshape(self.n_steps + 1, STATE_DIM)

    def pack(self, Xs: list[np.ndarray], t_f: float) -> np.ndarray:
        vec = np.empty(self.dim)
        for i, X in enumerate(Xs):
            vec[i * self.state_block:(i + 1) * self.state_block] = X.ravel()
        vec[self.t_index] = t_f
        return vec

    def weights(self, agent: int, w_agent: float, w_time: float) -> np.ndarray:
        """Consensus weight vector for one agent: own block unweighted."""
        w = np.full(self.dim, w_agent)
        off = agent * self.state_block
        w[off:off + self.state_block] = 0.0
        w[self.t_index] = w_time
        return w


@dataclass(frozen=True)
class LocalLayout:
    """Per-agent vector: [own X, own U, own T, proposals X_j for j != agent]."""

    n_agents: int
    n_steps: int
    agent: int

    @property
    def state_block(self) -> int:
        return STATE_DIM * (self.n_steps + 1)

    @property
    def control_block(self) -> int:
        return CONTROL_DIM * self.n_steps

    @property
    def t_index(self) -> int:
        return self.state_block + self.control_block

    @property
    def dim(self) -> int:
        return self.state_block + self.control_block + 1 + (self.n_agents - 1) * self.state_block

    def proposal_offset(self, j: int) -> int:
        others = [k for k in range(self.n_agents) if k != self.agent]
        return self.t_index + 1 + others.index(j) * self.state_block

    def own_states(self, vec: np.ndarray) -> np.ndarray:
        return vec[:self.state_block].reshape(self.n_steps + 1, STATE_DIM)

    def own_controls(self, vec: np.ndarray) -> np.ndarray:
        return vec[self.state_block:self.t_index].reshape(self.n_steps, CONTROL_DIM)

    def proposal(self, vec: np.ndarray, j: int) -> np.ndarray:
        off = self.proposal_offset(j)
        return vec[off:off + self.state_block].reshape(self.n_steps + 1, STATE_DIM)

    def trajectory_block(self, vec: np.ndarray, j: int) -> np.ndarray:
        return self.own_states(vec) if j == self.agent else self.proposal(vec, j)

    def trajectory_offset(self, j: int) -> int:
        return 0 if j == self.agent else self.proposal_offset(j)

    def consensus_map(self) -> np.ndarray:
        """For each local index, the consensus index it aligns with (-1: none)."""
        cons = ConsensusLayout(self.n_agents, self.n_steps)
        out = np.full(self.dim, -1, dtype=int)
        own_off = self.agent * self.state_block
        out[:self.state_block] = np.arange(own_off, own_off + self.state_block)
        out[self.t_index] = cons.t_index
        for j in range(self.n_agents):
            if j == self.agent:
                continue
            loff = self.proposal_offset(j)
            goff = j * self.state_block
            out[loff:loff + self.state_block] = np.arange(goff, goff + self.state_block)
        return out

    def to_consensus(self, vec: np.ndarray) -> np.ndarray:
        cmap = self.consensus_map()
        out = np.zeros(ConsensusLayout(self.n_agents, self.n_steps).dim)
        mask = cmap >= 0
        out[cmap[mask]] = vec[mask]
        return out


# -- shared value/gradient pieces -------------------------------------------


def _stage_cost(X: np.ndarray, U: np.ndarray, T: float, n_steps: int):
    """Trapezoidal running-cost quadrature and its gradients."""
    h = T / n_steps
    quad = lambda S, C: 1.0 + 0.5 * (S[:, 3] ** 2 + 10.0 * S[:, 4] ** 2 + S[:, 6] ** 2
                                     + C[:, 0] ** 2 + C[:, 1] ** 2)
    l0 = quad(X[:-1], U)
    l1 = quad(X[1:], U)
    f = 0.5 * h * float(np.sum(l0 + l1))

    dldx = np.zeros_like(X)
    dldx[:, 3] = X[:, 3]
    dldx[:, 4] = 10.0 * X[:, 4]
    dldx[:, 6] = X[:, 6]
    mult = np.full(X.shape[0], 2.0)
    mult[0] = mult[-1] = 1.0
    gX = 0.5 * h * dldx * mult[:, None]
    gU = h * U
    gT = float(np.sum(l0 + l1)) / (2.0 * n_steps)
    return f, gX, gU, gT


def _defects(X: np.ndarray, U: np.ndarray, T: float, n_steps: int, wheelbase: float):
    """Trapezoidal dynamics defects and per-block Jacobians."""
    h = T / n_steps
    f0 = dynamics_batch(X[:-1], U, wheelbase)
    f1 = dynamics_batch(X[1:], U, wheelbase)
    d = X[1:] - X[:-1] - 0.5 * h * (f0 + f1)

    A0, B0 = dynamics_jacobians(X[:-1], wheelbase)
    A1, B1 = dynamics_jacobians(X[1:], wheelbase)
    eye = np.eye(STATE_DIM)
    dd_x0 = -eye[None, :, :] - 0.5 * h * A0
    dd_x1 = eye[None, :, :] - 0.5 * h * A1
    dd_u = -0.5 * h * (B0 + B1)
    dd_T = -(f0 + f1) / (2.0 * n_steps)
    return d, dd_x0, dd_x1, dd_u, dd_T


def _fill_defect_jacobian(J: np.ndarray, row0: int, x_off: int, u_off: int,
                          t_col: int, n_steps: int, dd_x0, dd_x1, dd_u, dd_T):
    for k in range(n_steps):
        r = row0 + k * STATE_DIM
        c0 = x_off + k * STATE_DIM
        J[r:r + STATE_DIM, c0:c0 + STATE_DIM] = dd_x0[k]
        J[r:r + STATE_DIM, c0 + STATE_DIM:c0 + 2 * STATE_DIM] = dd_x1[k]
        cu = u_off + k * CONTROL_DIM
        J[r:r + STATE_DIM, cu:cu + CONTROL_DIM] = dd_u[k]
        J[r:r + STATE_DIM, t_col] = dd_T[k]


def _state_bounds(spec: SegmentSpec) -> tuple[np.ndarray, np.ndarray]:
    p = spec.params
    lo = p.state_lower().copy()
    hi = p.state_upper().copy()
    if spec.pos_lower is not None:
        lo[0], lo[1] = spec.pos_lower
    if spec.pos_upper is not None:
        hi[0], hi[1] = spec.pos_upper
    lo[2], hi[2] = -50.0, 50.0
    return lo, hi


def _boundary_arrays(spec: SegmentSpec, warm_X: list[np.ndarray],
                     tol: float = 0.5) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Boundary knot values; heading taken from the unwrapped warm knots."""
    starts, ends = [], []
    for i in range(spec.n_agents):
        s = spec.starts[i].as_array().copy()
        e = spec.ends[i].as_array().copy()
        for arr, knot, given in ((s, warm_X[i][0], spec.starts[i]),
                                 (e, warm_X[i][-1], spec.ends[i])):
            if abs(wrap_angle(knot[2] - given.theta)) > tol or \
               np.any(np.abs(np.delete(knot, 2) - np.delete(arr, 2)) > tol):
                raise SpecError(
                    f"warm start for agent {i} does not reach its boundary state")
            arr[2] = knot[2]  # unwrapped heading consistent with warm
        starts.append(s)
        ends.append(e)
    return starts, ends


def _knot_obstacles(spec: SegmentSpec, warm_X: list[np.ndarray]) -> list[list[np.ndarray]]:
    """Per-agent, per-knot obstacle centers within a band of the warm knots."""
    out = []
    centers = spec.obstacle_centers
    band = spec.obstacle_clearance + spec.obstacle_band
    for i in range(spec.n_agents):
        rows = []
        for k in range(spec.n_steps + 1):
            if centers is None or centers.size == 0:
                rows.append(np.zeros((0, 2)))
                continue
            d2 = np.sum((centers - warm_X[i][k, :2]) ** 2, axis=1)
            rows.append(centers[d2 <= band * band])
        out.append(rows)
    return out


# -- centralized transcription ----------------------------------------------


def transcribe(spec: SegmentSpec, warm: list[Trajectory]) -> NlpProblem:
    """Centralized fixed-endpoint NLP over all agents with one shared T."""
    if len(warm) != spec.n_agents:
        raise SpecError("one warm trajectory per agent required")
    K, N = spec.n_agents, spec.n_steps
    lay = CentralLayout(K, N)
    resampled = [resample_knots(tr, N) for tr in warm]
    warm_X = [X for X, _ in resampled]
    warm_U = [U for _, U in resampled]
    b_start, b_end = _boundary_arrays(spec, warm_X)
    knot_obs = _knot_obstacles(spec, warm_X)
    wb = spec.params.wheelbase

    lo = np.empty(lay.dim)
    hi = np.empty(lay.dim)
    s_lo, s_hi = _state_bounds(spec)
    u_lo, u_hi = spec.params.control_lower(), spec.params.control_upper()
    for i in range(K):
        xb_lo = np.tile(s_lo, N + 1)
        xb_hi = np.tile(s_hi, N + 1)
        xb_lo[:STATE_DIM] = xb_hi[:STATE_DIM] = b_start[i]
        xb_lo[-STATE_DIM:] = xb_hi[-STATE_DIM:] = b_end[i]
        lo[lay.x_offset(i):lay.u_offset(i)] = xb_lo
        hi[lay.x_offset(i):lay.u_offset(i)] = xb_hi
        lo[lay.u_offset(i):lay.u_offset(i) + lay.control_block] = np.tile(u_lo, N)
        hi[lay.u_offset(i):lay.u_offset(i) + lay.control_block] = np.tile(u_hi, N)
    lo[lay.t_index], hi[lay.t_index] = spec.t_min, spec.t_max

    def objective(vec: np.ndarray):
        T = vec[lay.t_index]
        f = spec.time_weight * T
        grad = np.zeros(lay.dim)
        grad[lay.t_index] = spec.time_weight
        for i in range(K):
            X, U = lay.states(vec, i), lay.controls(vec, i)
            fi, gX, gU, gT = _stage_cost(X, U, T, N)
            f += fi
            grad[lay.x_offset(i):lay.u_offset(i)] += gX.ravel()
            grad[lay.u_offset(i):lay.u_offset(i) + lay.control_block] += gU.ravel()
            grad[lay.t_index] += gT
        return f, grad

    n_eq = K * N * STATE_DIM

    def equalities(vec: np.ndarray):
        T = vec[lay.t_index]
        c = np.empty(n_eq)
        J = np.zeros((n_eq, lay.dim))
        for i in range(K):
            X, U = lay.states(vec, i), lay.controls(vec, i)
            d, dd_x0, dd_x1, dd_u, dd_T = _defects(X, U, T, N, wb)
            r0 = i * N * STATE_DIM
            c[r0:r0 + N * STATE_DIM] = d.ravel()
            _fill_defect_jacobian(J, r0, lay.x_offset(i), lay.u_offset(i),
                                  lay.t_index, N, dd_x0, dd_x1, dd_u, dd_T)
        return c, J

    pair_rows = [(i, j, k) for (i, j) in spec.collision_pairs for k in range(N + 1)]
    obs_rows = [(i, k, c) for i in range(K) for k in range(N + 1)
                for c in knot_obs[i][k]]
    n_in = len(pair_rows) + len(obs_rows)

    def inequalities(vec: np.ndarray):
        g = np.empty(n_in)
        J = np.zeros((n_in, lay.dim))
        d2min = spec.d_min ** 2
        for r, (i, j, k) in enumerate(pair_rows):
            pi = vec[lay.x_offset(i) + k * STATE_DIM: lay.x_offset(i) + k * STATE_DIM + 2]
            pj = vec[lay.x_offset(j) + k * STATE_DIM: lay.x_offset(j) + k * STATE_DIM + 2]
            diff = pi - pj
            g[r] = d2min - float(diff @ diff)
            J[r, lay.x_offset(i) + k * STATE_DIM: lay.x_offset(i) + k * STATE_DIM + 2] = -2.0 * diff
            J[r, lay.x_offset(j) + k * STATE_DIM: lay.x_offset(j) + k * STATE_DIM + 2] = 2.0 * diff
        c2 = spec.obstacle_clearance ** 2
        base = len(pair_rows)
        for r, (i, k, cen) in enumerate(obs_rows):
            p = vec[lay.x_offset(i) + k * STATE_DIM: lay.x_offset(i) + k * STATE_DIM + 2]
            diff = p - cen
            g[base + r] = c2 - float(diff @ diff)
            J[base + r, lay.x_offset(i) + k * STATE_DIM: lay.x_offset(i) + k * STATE_DIM + 2] = -2.0 * diff
        return g, J

    warm_vec = lay.pack(warm_X, warm_U, min(max(warm[0].duration, spec.t_min), spec.t_max))
    return NlpProblem(
        n=lay.dim, objective=objective, lower=lo, upper=hi,
        equalities=equalities if n_eq else None,
        inequalities=inequalities if n_in else None,
        meta={"layout": lay, "spec": spec, "warm": warm_vec},
    )


# -- per-agent transcription for consensus rounds ----------------------------


def transcribe_agent(spec: SegmentSpec, agent: int,
                     warm: list[Trajectory]) -> NlpProblem:
    """Local NLP of one agent: own dynamics plus proposals for the others.

    Proposals carry no dynamics; they enter only the pairwise clearance
    constraints here and the consensus penalty added by the caller.
    """
    if not 0 <= agent < spec.n_agents:
        raise SpecError("agent index out of range")
    K, N = spec.n_agents, spec.n_steps
    lay = LocalLayout(K, N, agent)
    resampled = [resample_knots(tr, N) for tr in warm]
    warm_X = [X for X, _ in resampled]
    b_start, b_end = _boundary_arrays(spec, warm_X)
    knot_obs = _knot_obstacles(spec, warm_X)
    wb = spec.params.wheelbase

    lo = np.full(lay.dim, -BIG)
    hi = np.full(lay.dim, BIG)
    s_lo, s_hi = _state_bounds(spec)
    xb_lo = np.tile(s_lo, N + 1)
    xb_hi = np.tile(s_hi, N + 1)
    xb_lo[:STATE_DIM] = xb_hi[:STATE_DIM] = b_start[agent]
    xb_lo[-STATE_DIM:] = xb_hi[-STATE_DIM:] = b_end[agent]
    lo[:lay.state_block], hi[:lay.state_block] = xb_lo, xb_hi
    lo[lay.state_block:lay.t_index] = np.tile(spec.params.control_lower(), N)
    hi[lay.state_block:lay.t_index] = np.tile(spec.params.control_upper(), N)
    lo[lay.t_index], hi[lay.t_index] = spec.t_min, spec.t_max

    def objective(vec: np.ndarray):
        X, U = lay.own_states(vec), lay.own_controls(vec)
        T = vec[lay.t_index]
        f, gX, gU, gT = _stage_cost(X, U, T, N)
        f += spec.time_weight * T
        grad = np.zeros(lay.dim)
        grad[:lay.state_block] = gX.ravel()
        grad[lay.state_block:lay.t_index] = gU.ravel()
        grad[lay.t_index] = gT + spec.time_weight
        return f, grad

    n_eq = N * STATE_DIM

    def equalities(vec: np.ndarray):
        X, U = lay.own_states(vec), lay.own_controls(vec)
        T = vec[lay.t_index]
        d, dd_x0, dd_x1, dd_u, dd_T = _defects(X, U, T, N, wb)
        J = np.zeros((n_eq, lay.dim))
        _fill_defect_jacobian(J, 0, 0, lay.state_block, lay.t_index,
                              N, dd_x0, dd_x1, dd_u, dd_T)
        return d.ravel(), J

    pairs = [(i, j) for (i, j) in spec.collision_pairs if agent in (i, j)]
    pair_rows = [(i, j, k) for (i, j) in pairs for k in range(N + 1)]
    obs_rows = [(k, c) for k in range(N + 1) for c in knot_obs[agent][k]]
    n_in = len(pair_rows) + len(obs_rows)

    def inequalities(vec: np.ndarray):
        g = np.empty(n_in)
        J = np.zeros((n_in, lay.dim))
        d2min = spec.d_min ** 2
        for r, (i, j, k) in enumerate(pair_rows):
            oi = lay.trajectory_offset(i) + k * STATE_DIM
            oj = lay.trajectory_offset(j) + k * STATE_DIM
            diff = vec[oi:oi + 2] - vec[oj:oj + 2]
            g[r] = d2min - float(diff @ diff)
            J[r, oi:oi + 2] = -2.0 * diff
            J[r, oj:oj + 2] = 2.0 * diff
        c2 = spec.obstacle_clearance ** 2
        base = len(pair_rows)
        for r, (k, cen) in enumerate(obs_rows):
            off = k * STATE_DIM
            diff = vec[off:off + 2] - cen
            g[base + r] = c2 - float(diff @ diff)
            J[base + r, off:off + 2] = -2.0 * diff
        return g, J

    warm_vec = np.zeros(lay.dim)
    warm_vec[:lay.state_block] = warm_X[agent].ravel()
    warm_vec[lay.state_block:lay.t_index] = resampled[agent][1].ravel()
    warm_vec[lay.t_index] = min(max(warm[agent].duration, spec.t_min), spec.t_max)
    for j in range(K):
        if j != agent:
            off = lay.proposal_offset(j)
            warm_vec[off:off + lay.state_block] = warm_X[j].ravel()
    return NlpProblem(
        n=lay.dim, objective=objective, lower=lo, upper=hi,
        equalities=equalities, inequalities=inequalities if n_in else None,
        meta={"layout": lay, "spec": spec, "warm": warm_vec},
    )


def augmented_lagrangian_local(local_vec: np.ndarray, xi: np.ndarray,
                               z: np.ndarray, beta: float, weights: np.ndarray,
                               layout: LocalLayout, objective) -> tuple[float, np.ndarray]:
    """Value and local-variable gradient of the consensus augmented Lagrangian.

    L_i = J_i + <z, W (xi_local - xi)> + (beta/2) ||W (xi_local - xi)||^2
    where the weighted residual covers the other agents' trajectory blocks
    and the terminal time, per the consensus weight vector.
    """
    cons = ConsensusLayout(layout.n_agents, layout.n_steps)
    if xi.shape != (cons.dim,) or z.shape != (cons.dim,) or weights.shape != (cons.dim,):
        raise DimensionMismatch(
            f"consensus vectors must have dimension {cons.dim}")
    if local_vec.shape != (layout.dim,):
        raise DimensionMismatch(f"local vector must have dimension {layout.dim}")
    f, grad = objective(local_vec)
    cmap = layout.consensus_map()
    mask = cmap >= 0
    xi_tilde = np.zeros(cons.dim)
    xi_tilde[cmap[mask]] = local_vec[mask]
    r = weights * (xi_tilde - xi)
    f = f + float(z @ r) + 0.5 * beta * float(r @ r)
    g_cons = weights * z + beta * weights * r
    grad = grad.copy()
    grad[mask] += g_cons[cmap[mask]]
    return f, grad
