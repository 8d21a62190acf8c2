"""Damped Newton with a logarithmic barrier for separable convex programs.

Both the dual problem (over martingale measures) and the endowment problem
(over strategies) have the form

    minimize  sum_i phi_i(w_i)   with   w = offset + basis @ z,  w > 0

where phi is convex and separable. The basis has orthonormal columns, so
the reduced Hessian basis.T @ diag(phi'') @ basis is positive definite.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, solve

from app.config import settings

logger = logging.getLogger(__name__)

Elementwise = Callable[[np.ndarray], np.ndarray]

ARMIJO = 0.25
BOUNDARY_FRACTION = 0.99
MIN_STEP = 1e-16


@dataclass(frozen=True)
class SeparableProblem:
    """phi and its first two derivatives, applied outcome-wise to w."""

    phi: Elementwise
    dphi: Elementwise
    d2phi: Elementwise
    offset: np.ndarray
    basis: np.ndarray

    def point(self, z: np.ndarray) -> np.ndarray:
        return self.offset + self.basis @ z

    def residual(self, w: np.ndarray) -> float:
        """Projected stationarity residual |basis.T phi'(w)|_inf."""
        if self.basis.shape[1] == 0:
            return 0.0
        return float(np.max(np.abs(self.basis.T @ self.dphi(w))))


@dataclass(frozen=True)
class NewtonResult:
    w: np.ndarray
    z: np.ndarray
    value: float
    iterations: int
    residual: float
    converged: bool


def _barrier_value(problem: SeparableProblem, w: np.ndarray, mu: float) -> float:
    if np.any(w <= 0):
        return np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        total = float(np.sum(problem.phi(w)))
        if mu > 0:
            total -= mu * float(np.sum(np.log(w)))
    return total if np.isfinite(total) else np.inf


def _newton_stage(problem: SeparableProblem, z: np.ndarray, mu: float, budget: int, tol: float):
    """Minimize phi + mu * barrier from z; returns (z, iterations used)."""
    M = problem.basis
    used = 0
    while used < budget:
        w = problem.point(z)
        grad_w = problem.dphi(w) - (mu / w if mu > 0 else 0.0)
        hess_w = problem.d2phi(w) + (mu / w ** 2 if mu > 0 else 0.0)
        g = M.T @ grad_w
        H = M.T @ (hess_w[:, None] * M)
        try:
            step = solve(H, -g, assume_a="pos")
        except (LinAlgError, ValueError):
            step, *_ = np.linalg.lstsq(H, -g, rcond=None)
        decrement = float(-g @ step)
        if not np.isfinite(decrement) or 0.5 * decrement <= tol:
            break
        used += 1
        dw = M @ step
        shrinking = dw < 0
        alpha = 1.0
        if np.any(shrinking):
            alpha = min(1.0, BOUNDARY_FRACTION * float(np.min(-w[shrinking] / dw[shrinking])))
        current = _barrier_value(problem, w, mu)
        slope = float(g @ step)
        while alpha > MIN_STEP:
            trial = _barrier_value(problem, w + alpha * dw, mu)
            if trial <= current + ARMIJO * alpha * slope:
                break
            alpha *= 0.5
        if alpha <= MIN_STEP:
            break
        z = z + alpha * step
    return z, used


def minimize_with_barrier(
    problem: SeparableProblem,
    z0: Optional[np.ndarray] = None,
    *,
    mu_start: Optional[float] = None,
    mu_stop: Optional[float] = None,
    mu_factor: Optional[float] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> NewtonResult:
    """
    Barrier continuation followed by a barrier-free polishing stage.

    Args:
        problem: Separable objective with its feasible affine parametrization
        z0: Starting coordinates with offset + basis @ z0 > 0 (default: zeros)
        mu_start: First barrier weight (default: settings.BARRIER_MU_START)
        mu_stop: Last barrier weight (default: settings.BARRIER_MU_STOP)
        mu_factor: Reduction factor between stages (default: settings.BARRIER_MU_FACTOR)
        max_iter: Cap on Newton steps over all stages (default: settings.NEWTON_MAX_ITER)
        tol: Target projected stationarity residual (default: settings.KKT_TOLERANCE)

    Returns:
        NewtonResult; ``converged`` is False when the residual target was missed
    """
    mu = settings.BARRIER_MU_START if mu_start is None else mu_start
    mu_stop = settings.BARRIER_MU_STOP if mu_stop is None else mu_stop
    mu_factor = settings.BARRIER_MU_FACTOR if mu_factor is None else mu_factor
    max_iter = settings.NEWTON_MAX_ITER if max_iter is None else max_iter
    tol = settings.KKT_TOLERANCE if tol is None else tol

    k = problem.basis.shape[1]
    z = np.zeros(k) if z0 is None else np.asarray(z0, dtype=float)
    if k == 0:
        w = problem.offset.copy()
        return NewtonResult(w, z, float(np.sum(problem.phi(w))), 0, 0.0, True)

    iterations = 0
    while mu >= mu_stop and iterations < max_iter:
        z, used = _newton_stage(problem, z, mu, max_iter - iterations, 1e-12)
        iterations += used
        mu *= mu_factor
    # the optimum is interior, so the barrier can be dropped for the last digits
    z, used = _newton_stage(problem, z, 0.0, max_iter - iterations, (0.01 * tol) ** 2)
    iterations += used

    w = problem.point(z)
    residual = problem.residual(w)
    value = float(np.sum(problem.phi(w)))
    converged = residual <= tol and np.all(w > 0)
    logger.debug("barrier Newton: %d iterations, residual %.3e", iterations, residual)
    return NewtonResult(w, z, value, iterations, residual, bool(converged))
