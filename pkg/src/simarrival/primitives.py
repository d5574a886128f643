"""Motion primitives on a grid lattice and their cell-sweep schedules.

A primitive is a short feasible trajectory between two lattice states,
anchored at cell (0, 0), together with the list of cells it sweeps.  Each
sweep record stores the cell offset, the first-touch time, the sweep
duration, and whether the cell is still touched when the primitive ends.

Primitives can be reversed in time for backward planning.  The reversed
instance of ``(dx, dy, ftt, swt, e)`` for a primitive of duration ``t_p``
and total translation ``(δx, δy)`` is::

    (dx - δx, dy - δy, t_p - ftt - swt, swt, ftt == 0)

Reversed primitives are planning-only occupancy artifacts: they are never
emitted as executable controls, and plans built from them are re-assembled
from the original forward primitives.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySet
from .model import (AugmentedState, Cell, ControlInput, ModelParams, Trajectory,
                    cell_center, wrap_angle)

SWEEP_DETECT_DT = 0.001

PRIMITIVE_SCHEMA = "simarrival-primitives/1"


@dataclass(frozen=True)
class LatticeState:
    """Discrete search state: grid cell, heading index, velocity level index."""

    cell: Cell
    heading: int
    vel: int

    def with_cell(self, cell: Cell) -> "LatticeState":
        return LatticeState(cell, self.heading, self.vel)


@dataclass(frozen=True)
class SweepInstance:
    dx: int
    dy: int
    ftt: float
    swt: float
    is_end_cell: bool

    @property
    def cell(self) -> Cell:
        return (self.dx, self.dy)


@dataclass
class MotionPrimitive:
    """A lattice motion with its trajectory, cost and sweep schedule.

    ``start.cell`` is always (0, 0); ``end.cell`` equals the total
    translation in cells.
    """

    id: int
    start: LatticeState
    end: LatticeState
    duration: float
    cost: float
    trajectory: Trajectory
    sweeps: tuple[SweepInstance, ...]
    cell_size: float = 1.0
    is_wait: bool = False
    is_reversed: bool = False

    @property
    def delta(self) -> Cell:
        return self.end.cell

    def __post_init__(self):
        if self.start.cell != (0, 0):
            raise ValueError("primitives are anchored at start cell (0, 0)")


def embed_lattice_state(ls: LatticeState, cell_size: float, headings: int,
                        vel_levels: list[float]) -> AugmentedState:
    """Continuous state at the center of the lattice cell, at rest steering."""
    cx, cy = cell_center(ls.cell, cell_size)
    theta = wrap_angle(2.0 * math.pi * ls.heading / headings)
    return AugmentedState(cx, cy, theta, 0.0, 0.0, vel_levels[ls.vel], 0.0)


def _touch_episodes(times: np.ndarray, positions: np.ndarray, radius: float,
                    cell_size: float) -> dict[Cell, list[tuple[float, float]]]:
    """Per-cell runs of consecutive detection times inside the footprint."""
    episodes: dict[Cell, list[tuple[float, float]]] = {}
    xs, ys = positions[:, 0], positions[:, 1]
    c0 = int(math.floor((xs.min() - radius) / cell_size - 0.5)) - 1
    c1 = int(math.ceil((xs.max() + radius) / cell_size + 0.5)) + 1
    r0 = int(math.floor((ys.min() - radius) / cell_size - 0.5)) - 1
    r1 = int(math.ceil((ys.max() + radius) / cell_size + 0.5)) + 1
    rr = radius * radius * (1.0 + 1e-12)
    for col in range(c0, c1 + 1):
        cx = (col + 0.5) * cell_size
        dx2 = (xs - cx) ** 2
        if dx2.min() > rr:
            continue
        for row in range(r0, r1 + 1):
            cy = (row + 0.5) * cell_size
            mask = dx2 + (ys - cy) ** 2 <= rr
            if not mask.any():
                continue
            idx = np.flatnonzero(mask)
            breaks = np.flatnonzero(np.diff(idx) > 1)
            starts = np.concatenate(([0], breaks + 1))
            ends = np.concatenate((breaks, [len(idx) - 1]))
            episodes[(col, row)] = [
                (float(times[idx[s]]), float(times[idx[e]])) for s, e in zip(starts, ends)
            ]
    return episodes


def compute_sweeps(prim: MotionPrimitive, p: ModelParams,
                   quantum: float = 0.1,
                   detect_dt: float = SWEEP_DETECT_DT) -> list[SweepInstance]:
    """Sweep schedule of a primitive, one instance per touch episode.

    Touches are detected on a dense interpolated grid and the episode
    bounds are then widened outward to multiples of ``quantum``, so that
    schedules are conservative and land exactly on the collision-checking
    grid.  A cell touched, left, and touched again yields one instance per
    episode.
    """
    traj = prim.trajectory
    t_p = prim.duration
    sample_t = traj.times_array()
    sample_xy = traj.states_array()[:, :2]
    n = max(1, round(t_p / detect_dt)) if t_p > 0 else 0
    times = np.linspace(0.0, t_p, n + 1)
    xs = np.interp(times, sample_t, sample_xy[:, 0])
    ys = np.interp(times, sample_t, sample_xy[:, 1])
    episodes = _touch_episodes(times, np.stack([xs, ys], axis=1),
                               p.footprint_radius, p.cell_size)

    start_cell = (0, 0)
    out = []
    for cell, eps_list in episodes.items():
        for (t0, t1) in eps_list:
            q0 = math.floor(t0 / quantum + 1e-9) * quantum
            q1 = math.ceil(t1 / quantum - 1e-9) * quantum
            q0 = max(0.0, q0)
            q1 = min(t_p, q1)
            if q1 <= q0 + 1e-12:  # single-point touch, widen to one quantum
                q1 = min(t_p, q0 + quantum)
                if q1 <= q0 + 1e-12:
                    q0 = max(0.0, q1 - quantum)
            is_end = q1 >= t_p - 1e-9
            out.append(SweepInstance(cell[0] - start_cell[0], cell[1] - start_cell[1],
                                     q0, q1 - q0, is_end))
    out.sort(key=lambda s: (s.ftt, s.dx, s.dy))
    return out


def reverse_primitive(prim: MotionPrimitive) -> MotionPrimitive:
    """Time-reverse a primitive for backward planning.

    Sweep instances follow the backward-instance mapping; the sampled
    trajectory is reversed in time and re-anchored at the former end cell.
    The reversed start heading equals the forward end heading (occupancy,
    not executability, is what backward search needs).  Cost and duration
    are preserved, and the operation is an involution.
    """
    t_p = prim.duration
    dx_tot, dy_tot = prim.delta
    sweeps = [
        SweepInstance(s.dx - dx_tot, s.dy - dy_tot, t_p - s.ftt - s.swt, s.swt,
                      abs(s.ftt) <= 1e-9)
        for s in prim.sweeps
    ]
    sweeps.sort(key=lambda s: (s.ftt, s.dx, s.dy))

    shift_x, shift_y = -dx_tot * prim.cell_size, -dy_tot * prim.cell_size
    rev_samples = []
    n = len(prim.trajectory.samples)
    for k in range(n - 1, -1, -1):
        t, s, u = prim.trajectory.samples[k]
        rev_samples.append((t_p - t,
                            replace(s, x=s.x + shift_x, y=s.y + shift_y),
                            u))
    new_start = LatticeState((0, 0), prim.end.heading, prim.end.vel)
    new_end = LatticeState((-dx_tot, -dy_tot), prim.start.heading, prim.start.vel)
    return MotionPrimitive(
        id=prim.id,
        start=new_start,
        end=new_end,
        duration=prim.duration,
        cost=prim.cost,
        trajectory=Trajectory(rev_samples),
        sweeps=tuple(sweeps),
        cell_size=prim.cell_size,
        is_wait=prim.is_wait,
        is_reversed=not prim.is_reversed,
    )


@dataclass
class PrimitiveSet:
    """Immutable collection of primitives indexed by start heading/velocity."""

    primitives: list[MotionPrimitive]
    tick: float
    cell_size: float
    headings: int
    vel_levels: list[float]
    sample_dt: float
    quantum: float
    lattice_hash: str = ""

    def __post_init__(self):
        self._by_start: dict[tuple[int, int], list[MotionPrimitive]] = {}
        for prim in self.primitives:
            key = (prim.start.heading, prim.start.vel)
            self._by_start.setdefault(key, []).append(prim)
        self._by_id = {}
        for prim in self.primitives:
            key = (prim.id, prim.is_reversed)
            if key in self._by_id:
                raise ValueError(f"duplicate primitive id {key}")
            self._by_id[key] = prim

    def applicable(self, ls: LatticeState) -> list[MotionPrimitive]:
        return self._by_start.get((ls.heading, ls.vel), [])

    def by_id(self, pid: int, is_reversed: bool = False) -> MotionPrimitive:
        return self._by_id[(pid, is_reversed)]

    @property
    def wait(self) -> MotionPrimitive | None:
        for prim in self.primitives:
            if prim.is_wait:
                return prim
        return None

    @property
    def wait_cost_rate(self) -> float:
        w = self.wait
        return w.cost / w.duration if w is not None else 0.0

    def reversed(self) -> "PrimitiveSet":
        return PrimitiveSet(
            primitives=[reverse_primitive(p) for p in self.primitives],
            tick=self.tick,
            cell_size=self.cell_size,
            headings=self.headings,
            vel_levels=list(self.vel_levels),
            sample_dt=self.sample_dt,
            quantum=self.quantum,
            lattice_hash=self.lattice_hash,
        )

    def closure_violations(self) -> list[str]:
        """End states whose (heading, vel) key has no applicable primitive."""
        out = []
        for prim in self.primitives:
            key = (prim.end.heading, prim.end.vel)
            if key not in self._by_start:
                out.append(f"primitive {prim.id} ends at unkeyed state {key}")
        return out

    def embed(self, ls: LatticeState) -> AugmentedState:
        return embed_lattice_state(ls, self.cell_size, self.headings, self.vel_levels)

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        prims = []
        for prim in self.primitives:
            prims.append({
                "id": prim.id,
                "start": [prim.start.cell[0], prim.start.cell[1], prim.start.heading, prim.start.vel],
                "end": [prim.end.cell[0], prim.end.cell[1], prim.end.heading, prim.end.vel],
                "duration": prim.duration,
                "cost": prim.cost,
                "cell_size": prim.cell_size,
                "is_wait": prim.is_wait,
                "is_reversed": prim.is_reversed,
                "samples": [[t, *s.as_array().tolist(), u.u_omega, u.u_a]
                            for t, s, u in prim.trajectory.samples],
                "sweeps": [[s.dx, s.dy, s.ftt, s.swt, s.is_end_cell] for s in prim.sweeps],
            })
        return {
            "schema": PRIMITIVE_SCHEMA,
            "tick": self.tick,
            "cell_size": self.cell_size,
            "headings": self.headings,
            "vel_levels": self.vel_levels,
            "sample_dt": self.sample_dt,
            "quantum": self.quantum,
            "lattice_hash": self.lattice_hash,
            "primitives": prims,
        }

    @staticmethod
    def from_json(doc: dict) -> "PrimitiveSet":
        if doc.get("schema") != PRIMITIVE_SCHEMA:
            raise ValueError(
                f"unsupported primitive file schema {doc.get('schema')!r}; "
                f"expected {PRIMITIVE_SCHEMA}")
        prims = []
        for rec in doc["primitives"]:
            samples = [
                (row[0], AugmentedState.from_array(row[1:8]), ControlInput(row[8], row[9]))
                for row in rec["samples"]
            ]
            prims.append(MotionPrimitive(
                id=rec["id"],
                start=LatticeState((rec["start"][0], rec["start"][1]), rec["start"][2], rec["start"][3]),
                end=LatticeState((rec["end"][0], rec["end"][1]), rec["end"][2], rec["end"][3]),
                duration=rec["duration"],
                cost=rec["cost"],
                trajectory=Trajectory(samples),
                sweeps=tuple(SweepInstance(*row) for row in rec["sweeps"]),
                cell_size=rec.get("cell_size", doc["cell_size"]),
                is_wait=rec["is_wait"],
                is_reversed=rec["is_reversed"],
            ))
        return PrimitiveSet(
            primitives=prims,
            tick=doc["tick"],
            cell_size=doc["cell_size"],
            headings=doc["headings"],
            vel_levels=doc["vel_levels"],
            sample_dt=doc["sample_dt"],
            quantum=doc["quantum"],
            lattice_hash=doc.get("lattice_hash", ""),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path) -> "PrimitiveSet":
        with open(path) as fh:
            return PrimitiveSet.from_json(json.load(fh))


def spec_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# -- abstract primitives (grid worlds decoupled from the vehicle model) ----


def linear_primitive(pid: int, delta: Cell, duration: float, cost: float, *,
                     heading: int = 0, end_heading: int | None = None,
                     vel_start: int = 0, vel_end: int = 0,
                     cell_size: float = 1.0, radius: float = 0.6,
                     sample_dt: float = 0.25, quantum: float = 0.25,
                     is_wait: bool = False) -> MotionPrimitive:
    """Straight constant-speed primitive for abstract grid worlds.

    The trajectory is a kinematically naive line between cell centers; it
    exists to carry occupancy and assigned cost, not vehicle dynamics.
    """
    if is_wait and delta != (0, 0):
        raise ValueError("wait primitives cannot translate")
    end_heading = heading if end_heading is None else end_heading
    p = ModelParams(footprint_radius=radius, cell_size=cell_size)
    x0, y0 = cell_center((0, 0), cell_size)
    x1, y1 = cell_center(delta, cell_size)
    dist = math.hypot(x1 - x0, y1 - y0)
    theta = math.atan2(y1 - y0, x1 - x0) if dist > 0 else 0.0
    speed = dist / duration if duration > 0 else 0.0
    n = max(1, round(duration / sample_dt))
    samples = []
    for k in range(n + 1):
        t = duration * k / n
        frac = k / n
        samples.append((t,
                        AugmentedState(x0 + frac * (x1 - x0), y0 + frac * (y1 - y0),
                                       theta, v=speed),
                        ControlInput()))
    prim = MotionPrimitive(
        id=pid,
        start=LatticeState((0, 0), heading, vel_start),
        end=LatticeState(delta, end_heading, vel_end),
        duration=duration,
        cost=cost,
        trajectory=Trajectory(samples),
        sweeps=(),
        cell_size=cell_size,
        is_wait=is_wait,
    )
    prim.sweeps = tuple(compute_sweeps(prim, p, quantum=quantum))
    return prim


def grid_world_set(moves: list[dict], *, tick: float = 1.0, cell_size: float = 1.0,
                   radius: float = 0.6, headings: int = 1,
                   sample_dt: float = 0.25, quantum: float = 0.25,
                   lattice_hash: str = "") -> PrimitiveSet:
    """Build an abstract single-velocity-level grid world primitive set.

    ``moves`` entries: dicts with keys delta, duration, cost, and optional
    heading/end_heading/is_wait.  All states are rest states (velocity
    level 0), so waiting is allowed everywhere the cell is safe.
    """
    prims = []
    for i, mv in enumerate(moves):
        prims.append(linear_primitive(
            i, tuple(mv["delta"]), mv["duration"], mv["cost"],
            heading=mv.get("heading", 0), end_heading=mv.get("end_heading"),
            vel_start=mv.get("vel_start", 0), vel_end=mv.get("vel_end", 0),
            cell_size=cell_size, radius=radius,
            sample_dt=sample_dt, quantum=quantum,
            is_wait=mv.get("is_wait", False)))
    if not any(not p.is_wait for p in prims):
        raise EmptySet("grid world needs at least one motion primitive")
    return PrimitiveSet(primitives=prims, tick=tick, cell_size=cell_size,
                        headings=headings, vel_levels=[0.0, 1.0],
                        sample_dt=sample_dt, quantum=quantum,
                        lattice_hash=lattice_hash)
