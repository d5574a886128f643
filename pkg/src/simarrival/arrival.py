"""Simultaneous arrival by planning the multi-agent problem backward.

With every agent initially at rest, solving the problem from the goals to
the starts with time-reversed primitives, reversing the result, and letting
each agent rest at its start for the difference to the longest duration
yields a plan where all agents reach their goals at the same time t_f.

The cost minimized backward is the plan cost without that initial-rest
padding; it equals the forward cost only for special running costs (zero
rest-wait cost, or pure arrival-time objectives with max aggregation), and
the two-speed fixture below witnesses the gap in general.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cbs import CbsSolution, MampProblem, cbs_solve
from .errors import PreconditionViolation
from .intervals import TIME_EPS
from .model import ModelParams, Segment, Trajectory, Workspace, first_conflict
from .primitives import LatticeState, MotionPrimitive, PrimitiveSet, grid_world_set
from .sipp import concatenate_primitives


@dataclass
class SyncPlan:
    """Per-agent trajectories of equal duration t_f, padded at the start."""

    trajectories: list[Trajectory]
    t_f: float
    paddings: list[float]
    backward_cost: float | None = None
    backward_costs: list[float] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return len(self.trajectories)

    def agent_costs(self) -> list[float]:
        """Forward plan cost per agent: sum of its segment costs (waits included)."""
        return [sum(s.cost for s in t.segments) for t in self.trajectories]

    def total_cost(self) -> float:
        return sum(self.agent_costs())

    def simultaneous(self) -> bool:
        return all(abs(t.duration - self.t_f) == 0.0 for t in self.trajectories)

    def conflict(self, params: ModelParams):
        return first_conflict(self.trajectories, params)


def _forward_primitives(traj: Trajectory, prims: PrimitiveSet) -> list[MotionPrimitive]:
    """Forward primitives behind a trajectory's segments, in order."""
    return [prims.by_id(seg.primitive_id, is_reversed=False) for seg in traj.segments]


def reverse_plan(backward_plan: list[Trajectory], t_f: float,
                 prims: PrimitiveSet, starts: list[LatticeState]) -> SyncPlan:
    """Reverse a backward solution in time and pad the starts to t_f.

    Each agent's forward trajectory replays the original (forward)
    primitives of its backward plan in reverse order; reversed primitives
    are never part of the output.  Before its motion begins at
    ``t_f - t_fi`` the agent rests at its start state.
    """
    wait = prims.wait
    forward_trajs = []
    paddings = []
    for i, btraj in enumerate(backward_plan):
        t_fi = btraj.duration
        if t_fi > t_f + TIME_EPS:
            raise ValueError("t_f must dominate every backward duration")
        pad = t_f - t_fi
        n_pad = 0
        if pad > TIME_EPS:
            if wait is None:
                raise ValueError("padding requires a wait primitive")
            n_pad = int(round(pad / wait.duration))
        apps: list[MotionPrimitive] = [wait] * n_pad
        # backward segments replayed last-to-first as forward primitives
        for seg in reversed(btraj.segments):
            apps.append(prims.by_id(seg.primitive_id, is_reversed=False))
        traj = concatenate_primitives(prims, starts[i], apps)
        forward_trajs.append(traj)
        paddings.append(pad)
    return SyncPlan(forward_trajs, t_f, paddings)


def solve_simultaneous(prob: MampProblem, time_limit: float = 100.0) -> SyncPlan:
    """Plan backward from the goals, then reverse and pad to equal duration."""
    levels = prob.prims.vel_levels
    for i, s in enumerate(prob.starts):
        if abs(levels[s.vel]) > 0.0:
            raise PreconditionViolation(
                f"agent {i} must start at rest (velocity level {s.vel} is moving)")
    if prob.dynamic_obstacles:
        raise PreconditionViolation(
            "simultaneous arrival does not support dynamic obstacles")

    backward = MampProblem(
        workspace=prob.workspace,
        params=prob.params,
        prims=prob.prims.reversed(),
        starts=prob.goals,
        goals=prob.starts,
        cost_mode=prob.cost_mode,
        aggregate=prob.aggregate,
    )
    sol: CbsSolution = cbs_solve(backward, time_limit)
    t_f = max(sol.arrival_times)
    plan = reverse_plan(sol.plan, t_f, prob.prims, prob.starts)
    plan.backward_cost = sol.total_cost
    plan.backward_costs = list(sol.costs)
    return plan


def pad_forward_plan(sol: CbsSolution, prob: MampProblem) -> SyncPlan:
    """Baseline comparator: forward plan padded by initial rest to equal length.

    Unlike the backward route this may reintroduce collisions; callers must
    re-check the result and report, not repair.
    """
    wait = prob.prims.wait
    t_f = max(sol.arrival_times)
    trajs, paddings = [], []
    for i, traj in enumerate(sol.plan):
        pad = t_f - traj.duration
        n_pad = int(round(pad / wait.duration)) if pad > TIME_EPS else 0
        apps = [wait] * n_pad + _forward_primitives(traj, prob.prims)
        trajs.append(concatenate_primitives(prob.prims, prob.starts[i], apps))
        paddings.append(pad)
    return SyncPlan(trajs, t_f, paddings)


def cost_gap_fixture() -> MampProblem:
    """Two-agent grid instance where backward-optimal is forward-suboptimal.

    Two forward primitives exist: a two-cell move (6 time units, cost 9) and
    a one-cell move (4 time units, cost 5), plus a unit wait of cost 1.  One
    agent travels four cells, the other two, on separated rows.  The
    backward-optimal plan pads the short agent with six waits (forward cost
    33) while padding with four waits and two one-cell moves costs 32.
    """
    prims = grid_world_set([
        {"delta": (2, 0), "duration": 6.0, "cost": 9.0},
        {"delta": (1, 0), "duration": 4.0, "cost": 5.0},
        {"delta": (0, 0), "duration": 1.0, "cost": 1.0, "is_wait": True},
    ], tick=1.0, cell_size=1.0, radius=0.6, sample_dt=0.25, quantum=0.25)
    ws = Workspace(5, 3)
    params = ModelParams(footprint_radius=0.6, cell_size=1.0)
    return MampProblem(
        workspace=ws,
        params=params,
        prims=prims,
        starts=[LatticeState((0, 0), 0, 0), LatticeState((0, 2), 0, 0)],
        goals=[LatticeState((4, 0), 0, 0), LatticeState((2, 2), 0, 0)],
        cost_mode="running",
        aggregate="sum",
    )
