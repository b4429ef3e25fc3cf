"""Derivative-free optimization of circuit parameters.

Nelder-Mead with adaptive simplex parameters plus seeded random restarts
stands in for the usual COBYLA-style local optimizer; the search algorithms
only rely on the derivative-free minimization contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize


@dataclass(frozen=True)
class OptBudget:
    max_evals: int = 0  # 0 = size the budget from the parameter count
    x_tol: float = 1e-6
    f_tol: float = 1e-9
    restarts: int = 3

    def __post_init__(self):
        if self.max_evals < 0 or self.restarts < 1:
            raise ValueError("invalid optimizer budget")
        if self.x_tol <= 0 or self.f_tol <= 0:
            raise ValueError("tolerances must be positive")

    def evals_for(self, n_params: int) -> int:
        if self.max_evals > 0:
            return self.max_evals
        return 150 * (n_params + 1)


@dataclass
class OptResult:
    theta_star: np.ndarray
    cost: float
    evals_used: int
    converged: bool


def _guard(cost):
    """Wrap the cost so non-finite values are reported as +inf, not fatal."""

    def wrapped(theta):
        value = float(cost(np.asarray(theta, dtype=float)))
        if not math.isfinite(value):
            return math.inf
        return value

    return wrapped


def minimize(cost, theta0, budget: OptBudget, rng: np.random.Generator) -> OptResult:
    """Derivative-free local minimization; never returns worse than theta0."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.size == 0:
        value = _guard(cost)(theta0)
        return OptResult(theta0, value, 1, True)
    f = _guard(cost)
    max_evals = budget.evals_for(theta0.size)
    best_theta = theta0.copy()
    best_cost = f(theta0)
    evals = 1
    converged = False
    starts = [theta0] + [
        rng.uniform(-math.pi, math.pi, size=theta0.size)
        for _ in range(budget.restarts - 1)
    ]
    for start in starts:
        res = _scipy_minimize(
            f,
            start,
            method="Nelder-Mead",
            options={
                "maxfev": max_evals,
                "xatol": budget.x_tol,
                "fatol": budget.f_tol,
                "adaptive": True,
            },
        )
        evals += int(res.nfev)
        if res.fun < best_cost:
            best_cost = float(res.fun)
            best_theta = np.asarray(res.x, dtype=float)
        converged = converged or bool(res.success)
    return OptResult(best_theta, best_cost, evals, converged)


def score_cell(cell, task, budget: OptBudget, rng: np.random.Generator,
               theta_init: np.ndarray | None = None):
    """Lazily materialize a cell into a circuit, fit its parameters on the
    task's training cost and return (theta_star, validation score).

    Validation score is the task's own figure of merit (higher is better).
    `theta_init` warm-starts the optimizer when its shape matches.
    """
    from .cell import cell_to_circuit

    circuit = cell_to_circuit(cell)
    if circuit.n_qubits != task.n_qubits:
        raise ValueError("cell width does not match task width")
    n = circuit.n_params
    if n == 0:
        theta = np.zeros(0)
        return theta, task.validation_score(circuit, theta)
    if theta_init is not None and np.shape(theta_init) == (n,):
        theta0 = np.asarray(theta_init, dtype=float)
    else:
        theta0 = rng.uniform(-math.pi, math.pi, size=n)
    result = minimize(lambda th: task.training_cost(circuit, th), theta0, budget, rng)
    return result.theta_star, task.validation_score(circuit, result.theta_star)
