"""Levenberg-Marquardt least-squares engine shared by every refinement step.

Minimizes cost(x) = sum(r(x)^2) for a vector-valued residual function.
Damping follows the Nielsen update (gain-ratio controlled); only accepted
steps move the iterate, so the cost sequence is monotone non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LMOptions:
    max_iter: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    init_damping: float = 1e-3

    def __post_init__(self):
        if self.gradient_tol <= 0 or self.step_tol <= 0 or self.init_damping <= 0:
            raise ValueError("tolerances and damping must be positive")


@dataclass
class LMReport:
    iterations: int
    initial_cost: float
    cost: float
    gradient_norm: float
    termination: str  # gradient | step | zero_cost | max_iter
    converged: bool


def finite_difference_jacobian(residual_fn, x, rel_step: float = 1e-6):
    """Central-difference Jacobian, step scaled per component."""
    x = np.asarray(x, dtype=np.float64)
    r0 = np.asarray(residual_fn(x), dtype=np.float64)
    J = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(residual_fn(xp)) - np.asarray(residual_fn(xm))) / (2 * h)
    return J


def lm_solve(residual_fn, x0, jacobian=None, opts: LMOptions | None = None):
    """Minimize sum(residual_fn(x)^2) from x0.

    jacobian: callable J(x) -> (m, n) array, or None for central finite
    differences. Returns (x_best, LMReport); when the iteration cap is hit the
    best iterate is still returned, with report.converged = False.
    """
    opts = opts or LMOptions()
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.ndim != 1:
        raise ValueError("x0 must be a 1-D parameter vector")
    jac = jacobian if jacobian is not None else (
        lambda xx: finite_difference_jacobian(residual_fn, xx)
    )

    r = np.asarray(residual_fn(x), dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual not finite at x0")
    cost = float(r @ r)
    initial_cost = cost
    if cost == 0.0:
        return x, LMReport(0, initial_cost, cost, 0.0, "zero_cost", True)

    J = np.asarray(jac(x), dtype=np.float64)
    g = J.T @ r
    A = J.T @ J
    mu = opts.init_damping * max(float(np.max(np.diag(A))), 1e-300)
    nu = 2.0
    term = "max_iter"
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(g)) <= opts.gradient_tol:
            term = "gradient"
            it -= 1
            break
        try:
            delta = np.linalg.solve(A + mu * np.eye(len(x)), -g)
        except np.linalg.LinAlgError:
            delta = None
        if delta is None or not np.all(np.isfinite(delta)):
            mu *= nu
            nu *= 2.0
            continue
        if np.linalg.norm(delta) <= opts.step_tol * (np.linalg.norm(x) + opts.step_tol):
            term = "step"
            break
        x_new = x + delta
        r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
        cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        # predicted reduction by the local model
        predicted = float(delta @ (mu * delta - g))
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if cost_new < cost and rho > 0:
            x, r, cost = x_new, r_new, cost_new
            J = np.asarray(jac(x), dtype=np.float64)
            g = J.T @ r
            A = J.T @ J
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if cost == 0.0:
                term = "zero_cost"
                break
        else:
            mu *= nu
            nu *= 2.0
    gnorm = float(np.max(np.abs(g)))
    converged = term in ("gradient", "step", "zero_cost")
    return x, LMReport(it, initial_cost, cost, gnorm, term, converged)
