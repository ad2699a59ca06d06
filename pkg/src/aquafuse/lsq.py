"""Damped Gauss-Newton least squares with optional box projection.

All curve fits in the package route through :func:`least_squares`; callers
supply analytic Jacobians. Finite-difference Jacobians exist only in the
test suite as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import FitDivergedError

ResidualJacobian = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    cost: float  # 0.5 * sum of squared residuals
    iterations: int
    converged: bool


def least_squares(
    residual_jac: ResidualJacobian,
    x0: np.ndarray,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    max_iter: int = 200,
    rel_cost_tol: float = 1e-8,
) -> FitResult:
    """Minimize 0.5 * ||r(x)||^2 with damped Gauss-Newton steps.

    ``residual_jac(x)`` returns the residual vector and its Jacobian. Steps
    solve (J'J + lam * diag(J'J)) d = -J'r; lam grows until a step lowers the
    cost and shrinks after each accepted step. When bounds are given, iterates
    are projected onto the box after every step. Convergence is declared when
    an accepted step changes the cost by less than ``rel_cost_tol`` relative
    to the current cost.
    """
    x = np.array(x0, dtype=np.float64)
    if lower is not None or upper is not None:
        x = np.clip(x, lower, upper)
    r, jac = residual_jac(x)
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        raise FitDivergedError("initial cost is not finite", x)

    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        hess = jac.T @ jac
        grad = jac.T @ r
        if not np.all(np.isfinite(hess)) or not np.all(np.isfinite(grad)):
            raise FitDivergedError("normal equations are not finite", x)
        damping = np.maximum(np.diag(hess), 1e-12)
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(hess + lam * np.diag(damping), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            if lower is not None or upper is not None:
                x_new = np.clip(x_new, lower, upper)
            r_new, jac_new = residual_jac(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            # Damping saturated: cost can no longer be reduced from here.
            break
        drop = cost - cost_new
        x, r, jac, cost = x_new, r_new, jac_new, cost_new
        lam = max(lam * 0.3, 1e-12)
        if drop <= rel_cost_tol * max(cost, 1e-300):
            converged = True
            break
    return FitResult(params=x, cost=cost, iterations=iterations, converged=converged)


def multistart_least_squares(
    residual_jac: ResidualJacobian,
    starts: list[np.ndarray],
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    max_iter: int = 200,
    rel_cost_tol: float = 1e-8,
) -> FitResult:
    """Run :func:`least_squares` from several starts, keep the lowest cost.

    Ties keep the earliest start, so a canonical first guess wins whenever
    the data cannot distinguish candidates.
    """
    best: FitResult | None = None
    for start in starts:
        result = least_squares(
            residual_jac, start, lower=lower, upper=upper,
            max_iter=max_iter, rel_cost_tol=rel_cost_tol,
        )
        if best is None or result.cost < best.cost:
            best = result
    assert best is not None, "at least one start required"
    return best
