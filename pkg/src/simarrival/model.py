"""Vehicle model, running cost, grid occupancy and conflict detection.

The vehicle is a kinematic bicycle with an augmented state
``(x, y, theta, alpha, omega, v, a)``: pose, steering angle, steering rate,
longitudinal speed and acceleration.  Controls are the steering-rate and
acceleration derivatives ``(u_omega, u_a)``.

Occupancy is grid based: at any instant the vehicle marks every cell whose
center lies within its footprint radius.  Collision checking between agents
intersects those per-cell occupancy intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BoundsViolation, EmptyTrajectory, OutOfWorkspace
from .intervals import TIME_EPS, Interval, merge, overlaps

Cell = tuple[int, int]

STATE_DIM = 7
CONTROL_DIM = 2


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]; a tie at -pi maps to +pi."""
    r = math.remainder(theta, math.tau)
    if r <= -math.pi:
        return math.pi
    return r


@dataclass(frozen=True)
class AugmentedState:
    x: float
    y: float
    theta: float
    alpha: float = 0.0
    omega: float = 0.0
    v: float = 0.0
    a: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.alpha, self.omega, self.v, self.a])

    @staticmethod
    def from_array(arr) -> "AugmentedState":
        x, y, theta, alpha, omega, v, a = (float(c) for c in arr)
        return AugmentedState(x, y, theta, alpha, omega, v, a)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControlInput:
    u_omega: float = 0.0
    u_a: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.u_omega, self.u_a])

    @staticmethod
    def from_array(arr) -> "ControlInput":
        return ControlInput(float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class ModelParams:
    """Geometry and box bounds of the vehicle plus grid resolution."""

    wheelbase: float = 1.2
    footprint_radius: float = 0.8
    cell_size: float = 1.0
    alpha_max: float = 1.0
    omega_max: float = 1.5
    v_max: float = 1.5
    a_max: float = 1.2
    u_omega_max: float = 4.0
    u_a_max: float = 2.5
    v_min: float = 0.0  # forward motion only

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        bounds = (self.alpha_max, self.omega_max, self.v_max, self.a_max,
                  self.u_omega_max, self.u_a_max, self.footprint_radius)
        if not all(math.isfinite(b) and b > 0 for b in bounds):
            raise ValueError("all bounds must be finite and positive")

    def state_lower(self) -> np.ndarray:
        big = 1e9
        return np.array([-big, -big, -big, -self.alpha_max, -self.omega_max,
                         self.v_min, -self.a_max])

    def state_upper(self) -> np.ndarray:
        big = 1e9
        return np.array([big, big, big, self.alpha_max, self.omega_max,
                         self.v_max, self.a_max])

    def control_lower(self) -> np.ndarray:
        return np.array([-self.u_omega_max, -self.u_a_max])

    def control_upper(self) -> np.ndarray:
        return np.array([self.u_omega_max, self.u_a_max])


def dynamics(state: np.ndarray, control: np.ndarray, wheelbase: float) -> np.ndarray:
    """Right-hand side of the augmented bicycle ODE."""
    x, y, theta, alpha, omega, v, a = state
    return np.array([
        v * math.cos(theta),
        v * math.sin(theta),
        v * math.tan(alpha) / wheelbase,
        omega,
        control[0],
        a,
        control[1],
    ])


def dynamics_batch(states: np.ndarray, controls: np.ndarray, wheelbase: float) -> np.ndarray:
    """Vectorized RHS for (n,7) states and (n,2) controls."""
    out = np.empty_like(states)
    theta = states[:, 2]
    v = states[:, 5]
    out[:, 0] = v * np.cos(theta)
    out[:, 1] = v * np.sin(theta)
    out[:, 2] = v * np.tan(states[:, 3]) / wheelbase
    out[:, 3] = states[:, 4]
    out[:, 4] = controls[:, 0]
    out[:, 5] = states[:, 6]
    out[:, 6] = controls[:, 1]
    return out


def dynamics_jacobians(states: np.ndarray, wheelbase: float) -> tuple[np.ndarray, np.ndarray]:
    """Batch Jacobians (A = df/dx, B = df/du) at (n,7) states.

    B is state independent but returned per sample for uniformity.
    """
    n = states.shape[0]
    A = np.zeros((n, STATE_DIM, STATE_DIM))
    theta = states[:, 2]
    alpha = states[:, 3]
    v = states[:, 5]
    A[:, 0, 2] = -v * np.sin(theta)
    A[:, 0, 5] = np.cos(theta)
    A[:, 1, 2] = v * np.cos(theta)
    A[:, 1, 5] = np.sin(theta)
    A[:, 2, 3] = v / (np.cos(alpha) ** 2 * wheelbase)
    A[:, 2, 5] = np.tan(alpha) / wheelbase
    A[:, 3, 4] = 1.0
    A[:, 5, 6] = 1.0
    B = np.zeros((n, STATE_DIM, CONTROL_DIM))
    B[:, 4, 0] = 1.0
    B[:, 6, 1] = 1.0
    return A, B


def rk4_step(state: np.ndarray, control: np.ndarray, dt: float, wheelbase: float) -> np.ndarray:
    k1 = dynamics(state, control, wheelbase)
    k2 = dynamics(state + 0.5 * dt * k1, control, wheelbase)
    k3 = dynamics(state + 0.5 * dt * k2, control, wheelbase)
    k4 = dynamics(state + dt * k3, control, wheelbase)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_dynamics(state: AugmentedState, u: ControlInput, dt: float,
                       p: ModelParams, tol: float = 1e-6) -> AugmentedState:
    """One fourth-order Runge-Kutta step; heading renormalized afterwards.

    Raises BoundsViolation when the resulting state leaves its box by more
    than ``tol``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    nxt = rk4_step(state.as_array(), u.as_array(), dt, p.wheelbase)
    lo, hi = p.state_lower(), p.state_upper()
    if np.any(nxt < lo - tol) or np.any(nxt > hi + tol):
        raise BoundsViolation(
            f"state {nxt.tolist()} outside box after dt={dt}")
    nxt[2] = wrap_angle(nxt[2])
    return AugmentedState.from_array(nxt)


def running_cost(state: AugmentedState, u: ControlInput) -> float:
    """Stage cost 1 + (alpha^2 + 10 omega^2 + a^2 + u.u) / 2, always >= 1."""
    quad = (state.alpha ** 2 + 10.0 * state.omega ** 2 + state.a ** 2
            + u.u_omega ** 2 + u.u_a ** 2)
    return 1.0 + 0.5 * quad


def running_cost_arrays(states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    quad = (states[:, 3] ** 2 + 10.0 * states[:, 4] ** 2 + states[:, 6] ** 2
            + controls[:, 0] ** 2 + controls[:, 1] ** 2)
    return 1.0 + 0.5 * quad


@dataclass(frozen=True)
class Segment:
    """One primitive application inside a trajectory (waits included)."""

    primitive_id: int
    t_start: float
    duration: float
    cost: float
    is_reversed: bool = False
    is_wait: bool = False


@dataclass
class Trajectory:
    """Timed state/control samples; times strictly increase from 0."""

    samples: list[tuple[float, AugmentedState, ControlInput]]
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        if self.samples:
            if abs(self.samples[0][0]) > TIME_EPS:
                raise ValueError("trajectory must start at t=0")
            for (t0, _, _), (t1, _, _) in zip(self.samples, self.samples[1:]):
                if t1 <= t0:
                    raise ValueError("sample times must strictly increase")

    @property
    def duration(self) -> float:
        return self.samples[-1][0] if self.samples else 0.0

    def state_at(self, t: float) -> AugmentedState:
        """State at the sample nearest to ``t`` (samples are dense)."""
        if not self.samples:
            raise EmptyTrajectory("no samples")
        idx = min(range(len(self.samples)), key=lambda i: abs(self.samples[i][0] - t))
        return self.samples[idx][1]

    def states_array(self) -> np.ndarray:
        return np.array([s.as_array() for _, s, _ in self.samples])

    def controls_array(self) -> np.ndarray:
        return np.array([u.as_array() for _, _, u in self.samples])

    def times_array(self) -> np.ndarray:
        return np.array([t for t, _, _ in self.samples])


def trajectory_cost(traj: Trajectory) -> float:
    """Trapezoidal quadrature of the running cost over the samples."""
    if not traj.samples:
        raise EmptyTrajectory("cannot integrate an empty trajectory")
    if len(traj.samples) == 1:
        return 0.0
    total = 0.0
    prev_t, prev_l = None, None
    for t, s, u in traj.samples:
        l = running_cost(s, u)
        if prev_t is not None:
            total += 0.5 * (prev_l + l) * (t - prev_t)
        prev_t, prev_l = t, l
    return total


@dataclass(frozen=True)
class Workspace:
    width: int
    height: int
    obstacles: frozenset[Cell] = frozenset()

    def __post_init__(self):
        for c in self.obstacles:
            if not self.in_bounds(c):
                raise ValueError(f"obstacle cell {c} outside {self.width}x{self.height} grid")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles


@dataclass(frozen=True)
class Conflict:
    agent_i: int
    agent_j: int
    time: float
    cell: Cell

    def __post_init__(self):
        if self.agent_i == self.agent_j:
            raise ValueError("a conflict needs two distinct agents")


def cell_center(cell: Cell, cell_size: float) -> tuple[float, float]:
    return ((cell[0] + 0.5) * cell_size, (cell[1] + 0.5) * cell_size)


def cell_of_point(x: float, y: float, cell_size: float) -> Cell:
    return (int(math.floor(x / cell_size)), int(math.floor(y / cell_size)))


def cells_touched(x: float, y: float, radius: float, cell_size: float) -> list[Cell]:
    """Cells whose centers lie within ``radius`` of (x, y)."""
    out = []
    c0 = int(math.floor((x - radius) / cell_size - 0.5 + 1e-12))
    c1 = int(math.ceil((x + radius) / cell_size - 0.5 - 1e-12))
    r0 = int(math.floor((y - radius) / cell_size - 0.5 + 1e-12))
    r1 = int(math.ceil((y + radius) / cell_size - 0.5 - 1e-12))
    rr = radius * radius * (1.0 + 1e-12)
    for col in range(c0, c1 + 1):
        for row in range(r0, r1 + 1):
            cx = (col + 0.5) * cell_size
            cy = (row + 0.5) * cell_size
            if (cx - x) ** 2 + (cy - y) ** 2 <= rr:
                out.append((col, row))
    return out


def swept_cells(traj: Trajectory, p: ModelParams,
                workspace: Workspace | None = None) -> dict[Cell, list[Interval]]:
    """Per-cell occupancy episodes of the trajectory footprint.

    Each episode is the contiguous run of samples during which the cell
    center stays inside the footprint disc.  With a workspace given, raises
    OutOfWorkspace as soon as a swept cell leaves the grid or lands on a
    static obstacle.
    """
    if not traj.samples:
        raise EmptyTrajectory("no samples to sweep")
    open_since: dict[Cell, float] = {}
    last_seen: dict[Cell, float] = {}
    episodes: dict[Cell, list[Interval]] = {}

    def close(cell: Cell):
        episodes.setdefault(cell, []).append((open_since.pop(cell), last_seen.pop(cell)))

    for t, s, _ in traj.samples:
        touched = set(cells_touched(s.x, s.y, p.footprint_radius, p.cell_size))
        if workspace is not None:
            for c in touched:
                if not workspace.is_free(c):
                    raise OutOfWorkspace(f"cell {c} at t={t:.3f} is not free workspace")
        for c in touched:
            if c not in open_since:
                open_since[c] = t
            last_seen[c] = t
        for c in [c for c in open_since if c not in touched]:
            close(c)
    for c in list(open_since):
        close(c)
    return {c: merge(eps_list) for c, eps_list in episodes.items()}


def first_conflict(plan: list[Trajectory], p: ModelParams) -> Conflict | None:
    """Earliest space-time overlap between any two agents' swept cells.

    Trajectories shorter than the longest one are padded at rest at their
    final state.  Ties break toward the smaller time, then the smaller
    agent pair, then the smaller cell.
    """
    if len(plan) < 2:
        return None
    horizon = max(t.duration for t in plan)
    occ: list[dict[Cell, list[Interval]]] = []
    for traj in plan:
        cells = swept_cells(traj, p)
        if traj.duration < horizon - TIME_EPS and traj.samples:
            _, s_end, _ = traj.samples[-1]
            for c in cells_touched(s_end.x, s_end.y, p.footprint_radius, p.cell_size):
                cells.setdefault(c, []).append((traj.duration, horizon))
            cells = {c: merge(v) for c, v in cells.items()}
        occ.append(cells)

    best: tuple[float, int, int, Cell] | None = None
    for i in range(len(plan)):
        for j in range(i + 1, len(plan)):
            shared = occ[i].keys() & occ[j].keys()
            for cell in shared:
                for s0, e0 in occ[i][cell]:
                    for s1, e1 in occ[j][cell]:
                        if overlaps(s0, e0, s1, e1):
                            cand = (max(s0, s1), i, j, cell)
                            if best is None or cand < best:
                                best = cand
    if best is None:
        return None
    t, i, j, cell = best
    return Conflict(i, j, t, cell)
