"""Distributed window improvement via relaxed nonlinear consensus ADMM.

Each round, every agent in parallel averages the received estimates into
the global vector, half-updates its multiplier, minimizes its local
augmented Lagrangian (its own transcription NLP plus the consensus
penalty), full-updates the multiplier and broadcasts a new estimate:

    xi      = (1/K) sum_j estimate_j
    z_half  = z + beta (1 - lambda) (xi_local - xi)
    local   = argmin L(local; xi, z_half)
    z       = z_half + beta (xi_local - xi)
    estimate = xi_local + z / beta

Workers exchange immutable per-round messages behind a barrier superstep,
so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, WindowFailed
from .model import Trajectory
from .nlp import NlpProblem, solve_local
from .transcription import (ConsensusLayout, LocalLayout, SegmentSpec,
                            augmented_lagrangian_local, transcribe_agent)


@dataclass
class NadmmConfig:
    beta: float = 5.0
    relaxation: float = 1.0
    rounds: int = 5
    w_agent: float = 1.0
    w_time: float = 10.0
    local_tol: float = 1e-6
    local_max_outer: int = 20
    local_max_inner: int = 150
    workers: int | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("penalty beta must be positive")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.w_agent < 0 or self.w_time < 0:
            raise ValueError("consensus weights must be nonnegative")


def consensus_update(estimates: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of the estimates, correctly rounded per component."""
    if not estimates:
        raise DimensionMismatch("need at least one estimate")
    dim = estimates[0].shape
    for e in estimates:
        if e.shape != dim:
            raise DimensionMismatch("estimates must share one layout")
    k = len(estimates)
    stacked = np.stack(estimates, axis=0)
    return np.array([math.fsum(stacked[:, i]) for i in range(stacked.shape[1])]) / k


def multiplier_half_update(z: np.ndarray, xi_local: np.ndarray, xi: np.ndarray,
                           beta: float, relaxation: float) -> np.ndarray:
    return z + beta * (1.0 - relaxation) * (xi_local - xi)


def multiplier_full_update(z_half: np.ndarray, xi_local: np.ndarray, xi: np.ndarray,
                           beta: float) -> np.ndarray:
    return z_half + beta * (xi_local - xi)


def multiplier_updates(z: np.ndarray, xi_local: np.ndarray, xi: np.ndarray,
                       beta: float, relaxation: float) -> tuple[np.ndarray, np.ndarray]:
    """Both affine multiplier updates evaluated on one residual.

    With relaxation 1 the half update is the identity.  Inside the round
    loop the half update sees the pre-solve local vector and the full
    update the post-solve one; here both use the same ``xi_local``.
    """
    if z.shape != xi_local.shape or z.shape != xi.shape:
        raise DimensionMismatch("multiplier and consensus vectors must align")
    z_half = multiplier_half_update(z, xi_local, xi, beta, relaxation)
    return z_half, multiplier_full_update(z_half, xi_local, xi, beta)


@dataclass
class RoundDiagnostics:
    round: int
    agent: int
    objective: float
    residual: float
    iterations: int
    converged: bool
    violation: float


LocalSolver = Callable[[int, np.ndarray, np.ndarray, object], tuple[np.ndarray, object, RoundDiagnostics]]


@dataclass
class NadmmResult:
    xi: np.ndarray
    locals: list[np.ndarray]
    multipliers: list[np.ndarray]
    diagnostics: list[RoundDiagnostics]
    carries: list[object]


def nadmm_run(estimates: list[np.ndarray], local_solver: LocalSolver,
              cfg: NadmmConfig, rounds: int | None = None) -> NadmmResult:
    """Generic superstep loop; the local solver owns the argmin step.

    ``local_solver(agent, xi, z_half, carry)`` returns the agent's new
    consensus-aligned local vector, an opaque warm-start carry, and a
    diagnostics row.  Agents are evaluated in index order regardless of the
    thread pool's completion order.
    """
    k = len(estimates)
    dim = estimates[0].shape[0]
    xi_locals = [e.copy() for e in estimates]
    zs = [np.zeros(dim) for _ in range(k)]
    estimates = [e.copy() for e in estimates]
    carries: list[object] = [None] * k
    diag: list[RoundDiagnostics] = []
    n_rounds = cfg.rounds if rounds is None else rounds
    workers = cfg.workers or k

    def agent_step(args):
        i, xi, s = args
        z_half = multiplier_half_update(zs[i], xi_locals[i], xi, cfg.beta, cfg.relaxation)
        xi_local_new, carry, d = local_solver(i, xi, z_half, carries[i])
        z_new = multiplier_full_update(z_half, xi_local_new, xi, cfg.beta)
        estimate = xi_local_new + z_new / cfg.beta
        d.round = s
        d.residual = float(np.linalg.norm(xi_local_new - xi))
        return i, xi_local_new, z_new, estimate, carry, d

    for s in range(n_rounds):
        xi = consensus_update(estimates)
        tasks = [(i, xi, s) for i in range(k)]
        if workers > 1 and k > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(agent_step, tasks))
        else:
            results = [agent_step(t) for t in tasks]
        for i, xi_local_new, z_new, estimate, carry, d in sorted(results, key=lambda r: r[0]):
            xi_locals[i] = xi_local_new
            zs[i] = z_new
            estimates[i] = estimate
            carries[i] = carry
            diag.append(d)
    xi = consensus_update(estimates)
    return NadmmResult(xi, xi_locals, zs, diag, carries)


@dataclass
class WindowSolution:
    states: list[np.ndarray]    # per agent, (N+1, 7) knots
    controls: list[np.ndarray]  # per agent, (N, 2) held controls
    duration: float
    diagnostics: list[RoundDiagnostics]


def nadmm_improve_window(spec: SegmentSpec, warm: list[Trajectory],
                         cfg: NadmmConfig) -> WindowSolution:
    """Solve one fixed-endpoint window distributedly across the agents.

    Raises WindowFailed when, after the final round, some agent's local
    solve is left with a constraint violation above the local tolerance;
    callers then fall back to their warm start.
    """
    k = spec.n_agents
    cons = ConsensusLayout(k, spec.n_steps)
    problems: list[NlpProblem] = []
    layouts: list[LocalLayout] = []
    weights: list[np.ndarray] = []
    for i in range(k):
        nlp = transcribe_agent(spec, i, warm)
        problems.append(nlp)
        layouts.append(nlp.meta["layout"])
        weights.append(cons.weights(i, cfg.w_agent, cfg.w_time))

    xi0s = [layouts[i].to_consensus(problems[i].meta["warm"]) for i in range(k)]
    last: list = [None] * k

    def local_solver(i: int, xi: np.ndarray, z_half: np.ndarray, carry):
        nlp = problems[i]
        base_objective = nlp.objective

        def objective(x: np.ndarray):
            return augmented_lagrangian_local(x, xi, z_half, cfg.beta,
                                              weights[i], layouts[i], base_objective)

        wrapped = NlpProblem(n=nlp.n, objective=objective, lower=nlp.lower,
                             upper=nlp.upper, equalities=nlp.equalities,
                             inequalities=nlp.inequalities)
        warm_vec = carry if carry is not None else nlp.meta["warm"]
        sol = solve_local(wrapped, warm_vec, tol=cfg.local_tol,
                          max_outer=cfg.local_max_outer,
                          max_inner=cfg.local_max_inner)
        last[i] = sol
        f_own, _ = base_objective(sol.x)
        d = RoundDiagnostics(0, i, float(f_own), 0.0, sol.inner_iterations,
                             sol.converged, sol.max_violation)
        return layouts[i].to_consensus(sol.x), sol.x, d

    result = nadmm_run(xi0s, local_solver, cfg)

    for i in range(k):
        if last[i] is not None and last[i].max_violation > 10.0 * cfg.local_tol:
            raise WindowFailed(
                f"agent {i} local violation {last[i].max_violation:.2e} "
                f"above tolerance in final round")
    states, controls = [], []
    for i in range(k):
        x = last[i].x if last[i] is not None else problems[i].meta["warm"]
        lay = layouts[i]
        states.append(lay.own_states(x).copy())
        controls.append(lay.own_controls(x).copy())
    return WindowSolution(states, controls, float(result.xi[cons.t_index]),
                          result.diagnostics)
