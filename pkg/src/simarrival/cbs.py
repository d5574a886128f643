"""High-level conflict-tree search over per-agent safe-interval plans.

Nodes carry a constraint set per agent and a full plan satisfying it.  The
open list is ordered by aggregate cost (sum or max of per-agent costs),
breaking ties toward fewer conflicts and then insertion order, which makes
runs deterministic.  Splitting always resolves the earliest conflict and
re-plans only the constrained agent.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

from .errors import Infeasible, NoPath, Timeout
from .intervals import Interval, overlaps
from .model import (Cell, Conflict, ModelParams, Trajectory, Workspace,
                    cells_touched, first_conflict, swept_cells)
from .primitives import LatticeState, PrimitiveSet
from .sipp import (SafeIntervalTable, SearchConstraint, Timeline,
                   lattice_heuristic, sipp_search)


@dataclass
class MampProblem:
    """Joint planning instance: workspace, endpoints, primitives, cost mode."""

    workspace: Workspace
    params: ModelParams
    prims: PrimitiveSet
    starts: list[LatticeState]
    goals: list[LatticeState]
    cost_mode: str = "running"
    aggregate: str = "sum"
    dynamic_obstacles: list[tuple[Cell, Interval]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.starts) != len(self.goals):
            raise ValueError("starts and goals must pair up")
        if self.cost_mode not in ("running", "makespan"):
            raise ValueError(f"unknown cost mode {self.cost_mode!r}")
        if self.aggregate not in ("sum", "max"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        problems = self.validate_endpoints()
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def _endpoint_cells(self, states: list[LatticeState]) -> list[set[Cell]]:
        out = []
        for ls in states:
            s = self.prims.embed(ls)
            out.append(set(cells_touched(s.x, s.y, self.params.footprint_radius,
                                         self.params.cell_size)))
        return out

    def validate_endpoints(self) -> list[str]:
        problems = []
        for label, states in (("start", self.starts), ("goal", self.goals)):
            cellsets = self._endpoint_cells(states)
            for i, cells in enumerate(cellsets):
                for c in cells:
                    if not self.workspace.is_free(c):
                        problems.append(f"{label} {i} touches blocked cell {c}")
            for i in range(len(cellsets)):
                for j in range(i + 1, len(cellsets)):
                    if cellsets[i] & cellsets[j]:
                        problems.append(f"{label}s {i} and {j} overlap")
        return problems


@dataclass
class CTNode:
    constraints: tuple[tuple[SearchConstraint, ...], ...]
    plan: list[Trajectory]
    costs: list[float]
    aggregate_cost: float
    n_conflicts: int


@dataclass
class CbsSolution:
    plan: list[Trajectory]
    costs: list[float]
    total_cost: float
    arrival_times: list[float]
    nodes_expanded: int
    nodes_generated: int


def make_constraint(c: Conflict, agent_index: int, tick: float) -> SearchConstraint:
    """Forbid the agent's occupancy of the conflict cell for one base tick."""
    if agent_index not in (c.agent_i, c.agent_j):
        raise ValueError("agent not involved in the conflict")
    return SearchConstraint(agent_index, c.cell,
                            (c.time - 0.5 * tick, c.time + 0.5 * tick))


def count_conflicts(plan: list[Trajectory], p: ModelParams) -> int:
    """Number of pairwise overlapping occupancy episodes (tie-break metric)."""
    occ = [swept_cells(t, p) for t in plan]
    n = 0
    for i in range(len(plan)):
        for j in range(i + 1, len(plan)):
            for cell in occ[i].keys() & occ[j].keys():
                for s0, e0 in occ[i][cell]:
                    for s1, e1 in occ[j][cell]:
                        if overlaps(s0, e0, s1, e1):
                            n += 1
    return n


def aggregate_cost(costs: list[float], mode: str) -> float:
    return max(costs) if mode == "max" else sum(costs)


def cbs_solve(prob: MampProblem, time_limit: float = 100.0) -> CbsSolution:
    """Best-first conflict-tree search; returns the first conflict-free plan."""
    deadline = time.monotonic() + time_limit
    table = SafeIntervalTable(prob.workspace, prob.dynamic_obstacles)
    heuristics = {}
    for i, goal in enumerate(prob.goals):
        key = (goal.cell, prob.cost_mode)
        if key not in heuristics:
            heuristics[key] = lattice_heuristic(prob.prims, prob.workspace,
                                                goal.cell, prob.cost_mode)

    def plan_agent(i: int, constraints: tuple[SearchConstraint, ...]):
        timeline = Timeline(table, list(constraints))
        return sipp_search(prob.starts[i], prob.goals[i], prob.prims, timeline,
                           cost_mode=prob.cost_mode,
                           heuristic=heuristics[(prob.goals[i].cell, prob.cost_mode)],
                           deadline=deadline)

    root_plan, root_costs = [], []
    for i in range(prob.n_agents):
        traj, cost = plan_agent(i, ())
        root_plan.append(traj)
        root_costs.append(cost)
    root = CTNode(tuple(() for _ in range(prob.n_agents)), root_plan, root_costs,
                  aggregate_cost(root_costs, prob.aggregate),
                  count_conflicts(root_plan, prob.params))

    counter = itertools.count()
    heap: list[tuple[float, int, int, CTNode]] = []
    heapq.heappush(heap, (root.aggregate_cost, root.n_conflicts, next(counter), root))
    expanded = 0
    generated = 1

    while heap:
        if time.monotonic() > deadline:
            raise Timeout("conflict-tree search deadline exceeded")
        _, _, _, node = heapq.heappop(heap)
        conflict = first_conflict(node.plan, prob.params)
        if conflict is None:
            return CbsSolution(node.plan, node.costs,
                               aggregate_cost(node.costs, prob.aggregate),
                               [t.duration for t in node.plan],
                               expanded, generated)
        expanded += 1
        for agent in (conflict.agent_i, conflict.agent_j):
            extra = make_constraint(conflict, agent, prob.prims.tick)
            new_constraints = list(node.constraints)
            new_constraints[agent] = node.constraints[agent] + (extra,)
            try:
                traj, cost = plan_agent(agent, new_constraints[agent])
            except NoPath:
                continue
            plan = list(node.plan)
            costs = list(node.costs)
            plan[agent] = traj
            costs[agent] = cost
            child = CTNode(tuple(new_constraints), plan, costs,
                           aggregate_cost(costs, prob.aggregate),
                           count_conflicts(plan, prob.params))
            heapq.heappush(heap, (child.aggregate_cost, child.n_conflicts,
                                  next(counter), child))
            generated += 1
    raise Infeasible("conflict tree exhausted without a conflict-free plan")
