"""Primitive generation: fixed-endpoint boundary-value solves on the lattice.

Canonical primitives are generated for the axis-aligned and the diagonal
start headings only and then rotated in quarter turns, which maps the grid
onto itself exactly and preserves feasibility of the bicycle dynamics.
Failed boundary-value problems are recorded and skipped; an empty motion
set is fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySet, GenerationFailed
from .model import (AugmentedState, Cell, ControlInput, ModelParams,
                    Trajectory, trajectory_cost, wrap_angle)
from .nlp import solve_local
from .primitives import (LatticeState, MotionPrimitive, PrimitiveSet,
                         SweepInstance, compute_sweeps, embed_lattice_state,
                         spec_hash)
from .transcription import SegmentSpec, transcribe


@dataclass(frozen=True)
class PrimitiveRequest:
    """One canonical boundary-value problem on the lattice."""

    label: str
    start_heading: int
    start_vel: int
    end_cell: Cell
    end_heading: int
    end_vel: int
    duration: float


@dataclass
class LatticeSpec:
    """Lattice geometry plus the list of canonical primitives to generate."""

    headings: int = 8
    v_cruise: float = 1.0
    tick: float = 0.5
    wait_duration: float = 0.5
    sample_dt: float = 0.1
    requests: list[PrimitiveRequest] = field(default_factory=list)

    def __post_init__(self):
        if self.headings % 4 != 0:
            raise ValueError("quarter-turn rotation needs headings divisible by 4")
        for r in self.requests:
            ticks = r.duration / self.tick
            if abs(ticks - round(ticks)) > 1e-9:
                raise ValueError(f"duration of {r.label} is not a tick multiple")

    @property
    def vel_levels(self) -> list[float]:
        return [0.0, self.v_cruise]

    def payload(self) -> dict:
        return {
            "headings": self.headings,
            "v_cruise": self.v_cruise,
            "tick": self.tick,
            "wait_duration": self.wait_duration,
            "sample_dt": self.sample_dt,
            "requests": [[r.label, r.start_heading, r.start_vel, list(r.end_cell),
                          r.end_heading, r.end_vel, r.duration] for r in self.requests],
        }


def default_lattice_spec(params: ModelParams | None = None) -> LatticeSpec:
    """Desk-scale lattice: 8 headings, rest and cruise levels, ~30 primitives.

    Straight one- and two-cell moves, 45 and 90 degree turns, and
    accelerate/brake transitions, for the axis (heading 0) and diagonal
    (heading 1) canonical starts.
    """
    reqs = [
        # axis-aligned canonical start (heading 0)
        PrimitiveRequest("straight1_h0", 0, 1, (1, 0), 0, 1, 1.0),
        PrimitiveRequest("straight2_h0", 0, 1, (2, 0), 0, 1, 2.0),
        PrimitiveRequest("turn45l_h0", 0, 1, (2, 1), 1, 1, 2.5),
        PrimitiveRequest("turn45r_h0", 0, 1, (2, -1), 7, 1, 2.5),
        PrimitiveRequest("turn90l_h0", 0, 1, (2, 2), 2, 1, 3.5),
        PrimitiveRequest("turn90r_h0", 0, 1, (2, -2), 6, 1, 3.5),
        PrimitiveRequest("accel_h0", 0, 0, (2, 0), 0, 1, 3.0),
        PrimitiveRequest("brake_h0", 0, 1, (2, 0), 0, 0, 3.0),
        # diagonal canonical start (heading 1)
        PrimitiveRequest("straight1_h1", 1, 1, (1, 1), 1, 1, 1.5),
        PrimitiveRequest("straight2_h1", 1, 1, (2, 2), 1, 1, 3.0),
        PrimitiveRequest("turn45l_h1", 1, 1, (1, 2), 2, 1, 2.5),
        PrimitiveRequest("turn45r_h1", 1, 1, (2, 1), 0, 1, 2.5),
        PrimitiveRequest("turn90l_h1", 1, 1, (0, 3), 3, 1, 3.5),
        PrimitiveRequest("turn90r_h1", 1, 1, (3, 0), 7, 1, 3.5),
        PrimitiveRequest("accel_h1", 1, 0, (2, 2), 1, 1, 4.0),
        PrimitiveRequest("brake_h1", 1, 1, (2, 2), 1, 0, 4.0),
    ]
    return LatticeSpec(requests=reqs)


def _warm_states(start: AugmentedState, end: AugmentedState, n: int) -> Trajectory:
    """Arc-blended warm path between boundary states with matched headings."""
    p0 = np.array([start.x, start.y])
    p1 = np.array([end.x, end.y])
    dtheta = wrap_angle(end.theta - start.theta)
    fracs = np.linspace(0.0, 1.0, n + 1)
    if abs(dtheta) < 1e-9:
        pos = p0[None, :] + fracs[:, None] * (p1 - p0)[None, :]
    else:
        chord = float(np.linalg.norm(p1 - p0))
        radius = chord / (2.0 * math.sin(abs(dtheta) / 2.0)) * math.copysign(1.0, dtheta)
        center = p0 + radius * np.array([-math.sin(start.theta), math.cos(start.theta)])
        phis = start.theta + fracs * dtheta
        arc = center[None, :] + radius * np.stack(
            [np.sin(phis), -np.cos(phis)], axis=1)
        pos = arc + fracs[:, None] * (p1 - arc[-1])[None, :]
    thetas = start.theta + fracs * dtheta
    vs = start.v + fracs * (end.v - start.v)
    duration = 1.0
    samples = []
    for i, f in enumerate(fracs):
        t = duration * f
        samples.append((t, AugmentedState(pos[i, 0], pos[i, 1], thetas[i], v=vs[i]),
                        ControlInput()))
    return Trajectory(samples)


def _solve_request(req: PrimitiveRequest, params: ModelParams, spec: LatticeSpec,
                   tol: float = 1e-7) -> MotionPrimitive:
    start_ls = LatticeState((0, 0), req.start_heading, req.start_vel)
    end_ls = LatticeState(req.end_cell, req.end_heading, req.end_vel)
    start = embed_lattice_state(start_ls, params.cell_size, spec.headings, spec.vel_levels)
    end = embed_lattice_state(end_ls, params.cell_size, spec.headings, spec.vel_levels)
    n = round(req.duration / spec.sample_dt)
    warm = _warm_states(start, end, n)
    seg = SegmentSpec(starts=[start], ends=[end], n_steps=n,
                      t_min=req.duration, t_max=req.duration, params=params)
    nlp = transcribe(seg, [warm])
    sol = solve_local(nlp, nlp.meta["warm"], tol=tol, max_outer=30, max_inner=400)
    if sol.max_violation > 1e-6:
        raise GenerationFailed(req.label,
                               f"violation {sol.max_violation:.2e} after "
                               f"{sol.outer_iterations} outer iterations")
    lay = nlp.meta["layout"]
    X = lay.states(sol.x, 0)
    U = lay.controls(sol.x, 0)
    samples = []
    for k in range(n + 1):
        u = U[min(k, n - 1)]
        samples.append((req.duration * k / n,
                        AugmentedState.from_array(X[k]),
                        ControlInput.from_array(u)))
    traj = Trajectory(samples)
    prim = MotionPrimitive(
        id=-1, start=start_ls, end=end_ls, duration=req.duration,
        cost=trajectory_cost(traj), trajectory=traj, sweeps=(),
        cell_size=params.cell_size)
    prim.sweeps = tuple(compute_sweeps(prim, params, quantum=spec.sample_dt))
    return prim


def _wait_primitive(params: ModelParams, spec: LatticeSpec) -> MotionPrimitive:
    ls = LatticeState((0, 0), 0, 0)
    state = embed_lattice_state(ls, params.cell_size, spec.headings, spec.vel_levels)
    n = max(1, round(spec.wait_duration / spec.sample_dt))
    samples = [(spec.wait_duration * k / n, state, ControlInput()) for k in range(n + 1)]
    traj = Trajectory(samples)
    prim = MotionPrimitive(
        id=-1, start=ls, end=ls, duration=spec.wait_duration,
        cost=trajectory_cost(traj), trajectory=traj, sweeps=(),
        cell_size=params.cell_size, is_wait=True)
    prim.sweeps = tuple(compute_sweeps(prim, params, quantum=spec.sample_dt))
    return prim


def rotate_quarter_turns(prim: MotionPrimitive, quarters: int,
                         headings: int) -> MotionPrimitive:
    """Rotate a primitive by 90-degree increments about its start cell center.

    Quarter turns permute cell offsets exactly ((dx, dy) -> (-dy, dx)), so
    sweep schedules rotate analytically rather than being re-detected.
    """
    q = quarters % 4
    if q == 0:
        return prim
    cs = prim.cell_size
    cx = cy = 0.5 * cs
    shift = headings // 4

    def rot_offset(c: Cell) -> Cell:
        x, y = c
        for _ in range(q):
            x, y = -y, x
        return (x, y)

    ang = q * math.pi / 2.0
    samples = []
    for t, s, u in prim.trajectory.samples:
        dx, dy = s.x - cx, s.y - cy
        for _ in range(q):
            dx, dy = -dy, dx
        samples.append((t, replace(s, x=cx + dx, y=cy + dy,
                                   theta=wrap_angle(s.theta + ang)), u))
    sweeps = tuple(sorted(
        (SweepInstance(*rot_offset((s.dx, s.dy)), s.ftt, s.swt, s.is_end_cell)
         for s in prim.sweeps), key=lambda s: (s.ftt, s.dx, s.dy)))
    return MotionPrimitive(
        id=prim.id,
        start=LatticeState((0, 0), (prim.start.heading + q * shift) % headings,
                           prim.start.vel),
        end=LatticeState(rot_offset(prim.end.cell),
                         (prim.end.heading + q * shift) % headings, prim.end.vel),
        duration=prim.duration, cost=prim.cost,
        trajectory=Trajectory(samples), sweeps=sweeps,
        cell_size=prim.cell_size, is_wait=prim.is_wait,
        is_reversed=prim.is_reversed)


@dataclass
class GenerationReport:
    generated: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)


def generate_primitives(p: ModelParams, spec: LatticeSpec | None = None
                        ) -> tuple[PrimitiveSet, GenerationReport]:
    """Generate the primitive set: solve canonical requests, rotate, add wait."""
    spec = spec or default_lattice_spec(p)
    report = GenerationReport()
    canonical: list[MotionPrimitive] = []
    for req in spec.requests:
        try:
            canonical.append(_solve_request(req, p, spec))
            report.generated.append(req.label)
        except GenerationFailed as exc:
            report.failed.append((req.label, exc.detail))
    if not canonical:
        raise EmptySet("no canonical primitive converged")

    prims: list[MotionPrimitive] = []
    next_id = 0
    wait = _wait_primitive(p, spec)
    wait.id = next_id
    next_id += 1
    prims.append(wait)
    for base in canonical:
        for q in range(4):
            rotated = rotate_quarter_turns(base, q, spec.headings)
            rotated.id = next_id
            next_id += 1
            prims.append(rotated)
    pset = PrimitiveSet(
        primitives=prims, tick=spec.tick, cell_size=p.cell_size,
        headings=spec.headings, vel_levels=spec.vel_levels,
        sample_dt=spec.sample_dt, quantum=spec.sample_dt,
        lattice_hash=spec_hash({"model": vars(p), "lattice": spec.payload()}))
    return pset, report
