"""Single-agent search over safe time intervals honoring motion primitives.

Nodes live on (cell, heading, velocity level, safe-interval) tuples.  A
primitive applies at a departure time if every one of its sweep instances
fits inside the safe intervals of the absolute cells it touches.  Waiting
before departure is only possible at rest states (velocity level 0), is
quantized to the base tick, and is priced through the wait primitive, so
search results match plans assembled purely from primitive sequences.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass

from dataclasses import replace as _replace_state

from .errors import NoPath, Timeout
from .intervals import TIME_EPS, Interval, clear_of, complement, find_piece, merge
from .model import Cell, ControlInput, Segment, Trajectory, Workspace
from .primitives import LatticeState, MotionPrimitive, PrimitiveSet

INF = math.inf


@dataclass(frozen=True)
class SafeInterval:
    cell: Cell
    start: float
    end: float


@dataclass(frozen=True)
class SearchConstraint:
    """Forbids one agent's occupancy of a cell during a closed interval."""

    agent: int
    cell: Cell
    interval: Interval

    def __post_init__(self):
        if self.interval[0] > self.interval[1]:
            raise ValueError("constraint interval is empty")


class SafeIntervalTable:
    """Per-cell occupancy and its complement over [0, inf).

    Static obstacle cells and out-of-bounds cells are permanently occupied.
    """

    def __init__(self, workspace: Workspace,
                 dynamic_obstacles: list[tuple[Cell, Interval]] = ()):
        self.workspace = workspace
        occ: dict[Cell, list[Interval]] = {}
        for cell, (s, e) in dynamic_obstacles:
            if s < 0 or e < s:
                raise ValueError(f"bad obstacle interval {(s, e)} on {cell}")
            occ.setdefault(cell, []).append((s, e))
        self._occ = {c: merge(v) for c, v in occ.items()}

    def occupancy(self, cell: Cell) -> list[Interval]:
        if not self.workspace.is_free(cell):
            return [(0.0, INF)]
        return self._occ.get(cell, [])

    def pieces(self, cell: Cell) -> list[Interval]:
        return complement(self.occupancy(cell))

    def intervals(self, cell: Cell) -> list[SafeInterval]:
        return [SafeInterval(cell, s, e) for s, e in self.pieces(cell)]


def build_safe_intervals(ws: Workspace,
                         dynamic_obstacles: list[tuple[Cell, Interval]] = ()) -> SafeIntervalTable:
    """Safe-interval table: per cell, the complement of obstacle occupancy."""
    return SafeIntervalTable(ws, dynamic_obstacles)


class Timeline:
    """One agent's effective view: base table plus its search constraints."""

    def __init__(self, table: SafeIntervalTable,
                 constraints: list[SearchConstraint] = ()):
        self._table = table
        extra: dict[Cell, list[Interval]] = {}
        for con in constraints:
            extra.setdefault(con.cell, []).append(con.interval)
        self._extra = extra
        self._cache: dict[Cell, tuple[list[Interval], list[Interval]]] = {}

    def _entry(self, cell: Cell) -> tuple[list[Interval], list[Interval]]:
        hit = self._cache.get(cell)
        if hit is None:
            occ = merge(self._table.occupancy(cell) + self._extra.get(cell, []))
            hit = (occ, complement(occ))
            self._cache[cell] = hit
        return hit

    def occupancy(self, cell: Cell) -> list[Interval]:
        return self._entry(cell)[0]

    def pieces(self, cell: Cell) -> list[Interval]:
        return self._entry(cell)[1]

    def piece_index(self, cell: Cell, t: float) -> int:
        return find_piece(self.pieces(cell), t)

    def last_finite_change(self, cells) -> float:
        out = 0.0
        for cell in cells:
            for _, e in self.occupancy(cell):
                if math.isfinite(e):
                    out = max(out, e)
        return out


@dataclass
class SippNode:
    state: LatticeState
    piece: int
    arrival: float
    g: float
    parent: "SippNode | None" = None
    primitive: MotionPrimitive | None = None
    departure: float = 0.0  # departure time of the primitive that produced this node

    def key(self) -> tuple:
        return (self.state.cell, self.state.heading, self.state.vel, self.piece)


@dataclass(frozen=True)
class Successor:
    state: LatticeState
    piece: int
    departure: float
    arrival: float


def _rest_cells(node_cell: Cell, prims: PrimitiveSet) -> list[Cell]:
    """Cells occupied while resting at a lattice state (wait-primitive sweeps)."""
    w = prims.wait
    if w is None:
        return [node_cell]
    return [(node_cell[0] + s.dx, node_cell[1] + s.dy) for s in w.sweeps]


def project_intervals(node: SippNode, prim: MotionPrimitive, timeline: Timeline,
                      prims: PrimitiveSet) -> list[Successor]:
    """Feasible applications of ``prim`` from ``node``.

    Returns at most one successor per reachable safe interval of the end
    cell, each with the earliest feasible departure.  Rest nodes may delay
    departure in base-tick multiples while their resting cells stay safe;
    moving nodes must depart immediately.
    """
    tick = prims.tick
    cy, cx = node.state.cell[1], node.state.cell[0]
    abs_sweeps = [((cx + s.dx, cy + s.dy), s.ftt, s.ftt + s.swt) for s in prim.sweeps]
    can_wait = node.state.vel == 0 and prims.wait is not None
    wait_cells = _rest_cells(node.state.cell, prims) if can_wait else []

    involved = [c for c, _, _ in abs_sweeps] + wait_cells
    scan_bound = max(node.arrival, timeline.last_finite_change(involved)) + tick

    end_cell = (cx + prim.delta[0], cy + prim.delta[1])
    end_state = LatticeState(end_cell, prim.end.heading, prim.end.vel)
    found: dict[int, Successor] = {}
    k = 0
    while True:
        tau = node.arrival + k * tick
        if tau > scan_bound + TIME_EPS:
            break
        if k > 0:
            if not can_wait:
                break
            ok_wait = all(clear_of(timeline.occupancy(c), node.arrival, tau)
                          for c in wait_cells)
            if not ok_wait:
                break
        feasible = all(clear_of(timeline.occupancy(c), tau + w0, tau + w1)
                       for c, w0, w1 in abs_sweeps)
        if feasible:
            arrival = tau + prim.duration
            piece = timeline.piece_index(end_cell, arrival)
            if piece >= 0 and piece not in found:
                found[piece] = Successor(end_state, piece, tau, arrival)
        if not can_wait:
            break
        k += 1
    return list(found.values())


def lattice_heuristic(prims: PrimitiveSet, ws: Workspace, goal_cell: Cell,
                      cost_mode: str) -> dict[Cell, float]:
    """Admissible cost-to-go: Dijkstra over relaxed per-displacement edges.

    Every primitive contributes an edge for its translation, weighted by the
    cheapest cost (or shortest duration) among primitives sharing it.  The
    relaxation drops headings, velocities and timing, so it never exceeds
    the true remaining cost.
    """
    edge_w: dict[Cell, float] = {}
    for prim in prims.primitives:
        if prim.delta == (0, 0):
            continue
        w = prim.duration if cost_mode == "makespan" else prim.cost
        d = prim.delta
        if d not in edge_w or w < edge_w[d]:
            edge_w[d] = w
    # expand backward from the goal: step -delta to find predecessors
    dist = {goal_cell: 0.0}
    heap = [(0.0, goal_cell)]
    while heap:
        d0, cell = heapq.heappop(heap)
        if d0 > dist.get(cell, INF):
            continue
        for (dx, dy), w in edge_w.items():
            prev = (cell[0] - dx, cell[1] - dy)
            if not ws.is_free(prev):
                continue
            nd = d0 + w
            if nd < dist.get(prev, INF) - 1e-15:
                dist[prev] = nd
                heapq.heappush(heap, (nd, prev))
    return dist


class _ParetoFront:
    """Nondominated (g, arrival) pairs per duplicate-detection key.

    Cost and arrival time are incomparable in general (a dearer plan may
    arrive earlier and catch a departure window a cheaper one misses), so
    dominance requires being no worse in both.
    """

    def __init__(self):
        self._by_key: dict[tuple, list[tuple[float, float]]] = {}

    def dominated(self, key: tuple, g: float, t: float) -> bool:
        for g0, t0 in self._by_key.get(key, []):
            if g0 <= g + TIME_EPS and t0 <= t + TIME_EPS:
                return True
        return False

    def insert(self, key: tuple, g: float, t: float) -> None:
        front = self._by_key.setdefault(key, [])
        front[:] = [(g0, t0) for g0, t0 in front if not (g <= g0 and t <= t0)]
        front.append((g, t))

    def is_current(self, key: tuple, g: float, t: float) -> bool:
        return any(abs(g0 - g) <= TIME_EPS and abs(t0 - t) <= TIME_EPS
                   for g0, t0 in self._by_key.get(key, []))


def sipp_search(start: LatticeState, goal: LatticeState, prims: PrimitiveSet,
                timeline: Timeline, cost_mode: str = "running",
                heuristic: dict[Cell, float] | None = None,
                deadline: float | None = None,
                max_expansions: int = 500_000) -> tuple[Trajectory, float]:
    """Minimum-cost primitive plan from start to goal under the timeline.

    cost_mode "running" sums primitive costs plus wait-primitive cost for
    every waited tick; "makespan" minimizes arrival time.  The goal must be
    reached inside a safe interval that extends to infinity, since the agent
    stays there afterwards.
    """
    if cost_mode not in ("running", "makespan"):
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    if heuristic is None:
        heuristic = lattice_heuristic(prims, timeline._table.workspace,
                                      goal.cell, cost_mode)
    wait_rate = prims.wait_cost_rate

    start_piece = timeline.piece_index(start.cell, 0.0)
    if start_piece < 0:
        raise NoPath("start cell occupied at t=0")
    h0 = heuristic.get(start.cell)
    if h0 is None:
        raise NoPath("goal unreachable in relaxed graph")
    root = SippNode(start, start_piece, 0.0, 0.0)

    counter = itertools.count()
    open_heap: list[tuple[float, float, int, SippNode]] = []
    heapq.heappush(open_heap, (h0, -0.0, next(counter), root))
    front = _ParetoFront()
    front.insert(root.key(), 0.0, 0.0)
    expansions = 0

    while open_heap:
        if deadline is not None and time.monotonic() > deadline:
            raise Timeout("single-agent search deadline exceeded")
        _, _, _, node = heapq.heappop(open_heap)
        if node.parent is not None and not front.is_current(node.key(), node.g, node.arrival):
            continue  # a later insertion dominated this entry
        if node.state == goal and timeline.pieces(node.state.cell)[node.piece][1] == INF:
            return _assemble(node, prims, timeline), node.g
        expansions += 1
        if expansions > max_expansions:
            raise Timeout(f"expansion cap {max_expansions} hit")
        for prim in prims.applicable(node.state):
            if prim.is_wait:
                continue  # waiting is folded into departure delays
            for succ in project_intervals(node, prim, timeline, prims):
                wait_t = succ.departure - node.arrival
                if cost_mode == "makespan":
                    g2 = succ.arrival
                else:
                    g2 = node.g + wait_t * wait_rate + prim.cost
                h = heuristic.get(succ.state.cell)
                if h is None:
                    continue
                key = (succ.state.cell, succ.state.heading, succ.state.vel, succ.piece)
                if front.dominated(key, g2, succ.arrival):
                    continue
                front.insert(key, g2, succ.arrival)
                child = SippNode(succ.state, succ.piece, succ.arrival, g2,
                                 parent=node, primitive=prim, departure=succ.departure)
                heapq.heappush(open_heap, (g2 + h, -succ.arrival, next(counter), child))
    raise NoPath(f"no plan from {start} to {goal}")


def concatenate_primitives(prims: PrimitiveSet, start: LatticeState,
                           applications: list[MotionPrimitive]) -> Trajectory:
    """Chain primitive applications from a start state into one trajectory.

    Each application must start where the previous one ended; sample times
    are made absolute and per-application segments are recorded so the plan
    can later be reversed or re-costed without re-searching.
    """
    samples = [(0.0, prims.embed(start), ControlInput())]
    segments: list[Segment] = []
    t_cursor = 0.0
    cell = start.cell
    heading, vel = start.heading, start.vel
    for prim in applications:
        if (prim.start.heading, prim.start.vel) != (heading, vel):
            raise ValueError(
                f"primitive {prim.id} not applicable at heading={heading}, vel={vel}")
        t_cursor = _append_primitive(samples, prim, t_cursor, cell, prims.cell_size)
        segments.append(Segment(prim.id, t_cursor - prim.duration, prim.duration,
                                prim.cost, prim.is_reversed, prim.is_wait))
        cell = (cell[0] + prim.delta[0], cell[1] + prim.delta[1])
        heading, vel = prim.end.heading, prim.end.vel
    return Trajectory(samples, segments)


def _assemble(node: SippNode, prims: PrimitiveSet, timeline: Timeline) -> Trajectory:
    """Concatenate the primitive applications along the found path."""
    chain: list[SippNode] = []
    cur = node
    while cur.parent is not None:
        chain.append(cur)
        cur = cur.parent
    chain.reverse()

    wait = prims.wait
    apps: list[MotionPrimitive] = []
    for step in chain:
        wait_time = step.departure - (step.parent.arrival if step.parent else 0.0)
        n_waits = int(round(wait_time / prims.tick)) if wait_time > TIME_EPS else 0
        apps.extend([wait] * n_waits)
        apps.append(step.primitive)
    return concatenate_primitives(prims, cur.state, apps)


def _append_primitive(samples, prim: MotionPrimitive, t0: float,
                      cell: Cell, cell_size: float) -> float:
    ox, oy = cell[0] * cell_size, cell[1] * cell_size
    for t, s, u in prim.trajectory.samples[1:]:
        samples.append((t0 + t, _replace_state(s, x=s.x + ox, y=s.y + oy), u))
    return t0 + prim.duration
