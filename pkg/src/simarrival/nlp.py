"""Smooth constrained NLP container and a local augmented-Lagrangian solver.

The solver runs a Powell-Hestenes-Rockafellar outer loop over equality and
inequality constraints with an L-BFGS-B inner minimizer handling the box
bounds.  It is a local method: it returns the best feasible point seen and
reports convergence honestly instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]
VecJac = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass
class NlpProblem:
    """f(x) -> min s.t. c(x) = 0, g(x) <= 0, lower <= x <= upper."""

    n: int
    objective: ValueGrad
    lower: np.ndarray
    upper: np.ndarray
    equalities: VecJac | None = None
    inequalities: VecJac | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class LocalSolution:
    x: np.ndarray
    objective: float
    max_violation: float
    converged: bool
    outer_iterations: int
    inner_iterations: int


def violation(nlp: NlpProblem, x: np.ndarray) -> float:
    v = 0.0
    if nlp.equalities is not None:
        c, _ = nlp.equalities(x)
        if c.size:
            v = max(v, float(np.abs(c).max()))
    if nlp.inequalities is not None:
        g, _ = nlp.inequalities(x)
        if g.size:
            v = max(v, float(np.maximum(g, 0.0).max()))
    return v


def _projected_gradient_norm(grad: np.ndarray, x: np.ndarray,
                             lower: np.ndarray, upper: np.ndarray) -> float:
    pg = grad.copy()
    at_lo = (x <= lower + 1e-12) & (pg > 0)
    at_hi = (x >= upper - 1e-12) & (pg < 0)
    pg[at_lo | at_hi] = 0.0
    return float(np.abs(pg).max()) if pg.size else 0.0


def solve_local(nlp: NlpProblem, warm: np.ndarray, tol: float = 1e-6,
                max_outer: int = 50, max_inner: int = 200,
                mu0: float = 10.0) -> LocalSolution:
    """Minimize the NLP starting from ``warm``.

    Convergence means constraint violation <= tol and a projected-gradient
    norm of the Lagrangian <= tol (scaled by the objective magnitude).  On
    failure the best feasible point seen, or failing that the least
    violating one, is returned with ``converged=False``.
    """
    x = np.clip(np.asarray(warm, dtype=float), nlp.lower, nlp.upper)
    n_eq = nlp.equalities(x)[0].size if nlp.equalities is not None else 0
    n_in = nlp.inequalities(x)[0].size if nlp.inequalities is not None else 0
    lam_eq = np.zeros(n_eq)
    lam_in = np.zeros(n_in)
    mu = mu0

    bounds = list(zip(nlp.lower, nlp.upper))
    best_x, best_f = x.copy(), math.inf
    fallback_x, fallback_viol = x.copy(), math.inf
    inner_total = 0
    prev_viol = math.inf
    converged = False
    outer_done = 0

    for outer in range(max_outer):
        outer_done = outer + 1

        def merit(xv: np.ndarray) -> tuple[float, np.ndarray]:
            f, grad = nlp.objective(xv)
            grad = grad.copy()
            if n_eq:
                c, jc = nlp.equalities(xv)
                w = lam_eq + mu * c
                f += float(lam_eq @ c) + 0.5 * mu * float(c @ c)
                grad += jc.T @ w
            if n_in:
                g, jg = nlp.inequalities(xv)
                act = np.maximum(0.0, lam_in + mu * g)
                f += float(act @ act - lam_in @ lam_in) / (2.0 * mu)
                grad += jg.T @ act
            return f, grad

        res = minimize(merit, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_inner, "ftol": 1e-16,
                                "gtol": max(1e-12, 0.01 * tol), "maxcor": 20})
        x = res.x
        inner_total += int(res.nit)

        f_val, f_grad = nlp.objective(x)
        viol = violation(nlp, x)
        if viol <= tol and f_val < best_f:
            best_x, best_f = x.copy(), f_val
        if viol < fallback_viol:
            fallback_x, fallback_viol = x.copy(), viol

        # first-order multiplier updates
        lag_grad = f_grad.copy()
        if n_eq:
            c, jc = nlp.equalities(x)
            lam_eq = lam_eq + mu * c
            lag_grad += jc.T @ lam_eq
        if n_in:
            g, jg = nlp.inequalities(x)
            lam_in = np.maximum(0.0, lam_in + mu * g)
            lag_grad += jg.T @ lam_in

        pg = _projected_gradient_norm(lag_grad, x, nlp.lower, nlp.upper)
        if viol <= tol and pg <= tol * max(1.0, abs(f_val)):
            best_x, best_f = x.copy(), f_val
            converged = True
            break
        if viol > 0.25 * prev_viol:
            mu = min(mu * 8.0, 1e9)
        prev_viol = viol

    if math.isinf(best_f):
        f_val, _ = nlp.objective(fallback_x)
        return LocalSolution(fallback_x, f_val, fallback_viol, False,
                             outer_done, inner_total)
    return LocalSolution(best_x, best_f, violation(nlp, best_x), converged,
                         outer_done, inner_total)
