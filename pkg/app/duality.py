"""Primal and dual value functions, their optimizers and the endowment problem."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np
from scipy.linalg import null_space, orth
from scipy.optimize import linprog

from app.config import settings
from app.errors import DomainError, SolverFailure, SpaceMismatch
from app.market import (
    ClaimVector,
    MarketModel,
    MartingaleConstraints,
    Strategy,
    gains_matrix,
    is_replicable,
    martingale_measure_constraints,
)
from app.newton import SeparableProblem, minimize_with_barrier
from app.preferences import UtilityField
from app.prob_space import Density, Measure

logger = logging.getLogger(__name__)

# wealth below this at a state's best strategy counts as pinned to zero
FACE_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class DualSolution:
    """
    Minimizer of E_P[V(y dQ/dP)] over martingale measures Q.

    ``z_hat`` is dQ/dP relative to the measure the problem was posed under,
    so ``y * z_hat`` is the optimal terminal deflator.
    """

    y: float
    q_hat: Measure
    z_hat: Density
    value: float
    boundary_flag: bool
    iterations: int
    kkt_residual: float
    feasibility_residual: float

    @property
    def deflator(self) -> np.ndarray:
        return self.y * self.z_hat.values


@dataclass(frozen=True, eq=False)
class PrimalSolution:
    """Optimal terminal wealth for initial capital x and its value u(x)."""

    x: float
    terminal_wealth: np.ndarray
    strategy: Optional[Strategy]
    value: float
    y_star: float
    dual: DualSolution
    budget_residual: float

    def wealth_map(self) -> Dict[str, float]:
        space = self.dual.q_hat.space
        return {label: float(v) for label, v in zip(space.outcomes, self.terminal_wealth)}


@dataclass(frozen=True, eq=False)
class EndowmentSolution:
    """Solution of the utility maximization with q units of a claim in the endowment."""

    value: float
    terminal_wealth: Optional[np.ndarray]
    strategy: Optional[Strategy]
    iterations: int
    residual: float
    feasible: bool


def _check_inputs(model: MarketModel, U: UtilityField, P: Measure) -> None:
    if not (model.space.same_as(U.space) and model.space.same_as(P.space)):
        raise SpaceMismatch("model, utility and measure must share one space")
    P.require_equivalent()


def solve_dual(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    y: float,
    *,
    reference: Optional[Density] = None,
    start: Optional[np.ndarray] = None,
    constraints: Optional[MartingaleConstraints] = None,
) -> DualSolution:
    """
    Solve min_Q E_P[V(y dQ/dP)] over the martingale polytope.

    Args:
        model: Market model
        U: Utility field (its conjugate is used)
        P: Reference measure, equivalent
        y: Dual argument, positive
        reference: Optional density Z; the problem is then posed under the
            measure with weights P * Z, composed with the density instead
            of materialized as a new Measure
        start: Optional strictly positive feasible starting point for q
        constraints: Precomputed martingale constraints

    Returns:
        DualSolution

    Raises:
        NoArbitrageViolation: the polytope has no strictly positive point
        SolverFailure: the residual target was missed within the iteration cap
    """
    _check_inputs(model, U, P)
    if not y > 0:
        raise DomainError(f"dual argument must be positive, got {y}")
    constraints = constraints or martingale_measure_constraints(model)
    if reference is None:
        base = P
    else:
        if not reference.base.space.same_as(P.space):
            raise SpaceMismatch("reference density lives on another space")
        composed = P.weights * reference.values
        base = Measure(P.space, composed / composed.sum())
    weights = base.weights
    V = U.conjugate()

    # normalize by the gradient size at the start so the residual is scale free
    initial_slope = float(np.max(np.abs(y * V.derivative(y * constraints.interior / weights))))
    scale = 1.0 / initial_slope if np.isfinite(initial_slope) and initial_slope > 0 else 1.0
    problem = SeparableProblem(
        phi=lambda q: scale * weights * V.value(y * q / weights),
        dphi=lambda q: scale * y * V.derivative(y * q / weights),
        d2phi=lambda q: (scale * y * y / weights) * V.second_derivative(y * q / weights),
        offset=constraints.interior,
        basis=constraints.null_basis,
    )
    z0 = None
    if start is not None and constraints.dimension > 0:
        z0 = constraints.null_basis.T @ (np.asarray(start, dtype=float) - constraints.interior)
        if np.any(problem.point(z0) <= 0):
            raise DomainError("dual starting point must be strictly positive")
    result = minimize_with_barrier(problem, z0)
    if not result.converged:
        raise SolverFailure(
            f"dual solver stopped after {result.iterations} iterations with residual {result.residual:.3e}",
            residual=result.residual,
            iterations=result.iterations,
        )

    q = result.w
    q_hat = Measure(P.space, q / q.sum())
    z_hat = Density(base, q / weights)
    value = base.expect(V.value(y * z_hat.values))
    boundary = bool(np.min(q) < settings.BOUNDARY_THRESHOLD)
    if boundary:
        logger.warning("dual optimum touches the boundary (min weight %.3e)", float(np.min(q)))
    logger.debug("dual solved at y=%.6g: value %.12g, %d iterations", y, value, result.iterations)
    return DualSolution(
        y=float(y),
        q_hat=q_hat,
        z_hat=z_hat,
        value=value,
        boundary_flag=boundary,
        iterations=result.iterations,
        kkt_residual=result.residual,
        feasibility_residual=constraints.residual(q),
    )


def _budget(U: UtilityField, dual: DualSolution) -> tuple:
    wealth = U.inverse_marginal(dual.deflator)
    return float(np.dot(dual.q_hat.weights, wealth)), wealth


def solve_primal(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    *,
    constraints: Optional[MartingaleConstraints] = None,
    rtol: Optional[float] = None,
) -> PrimalSolution:
    """
    Maximize E_P[U(X_T)] over wealth processes started at x.

    The multiplier y is found by bisection in log y on the strictly
    decreasing budget map y -> E_Q(y)[I(y z(y))]; the optimizer is then
    X_T = I(y z(y)).

    Raises:
        DomainError: x <= 0
        SolverFailure: the bracket cannot be expanded within 2^+-64, or the
            bisection exceeds settings.BISECTION_MAX_ITER steps
    """
    _check_inputs(model, U, P)
    if not x > 0:
        raise DomainError(f"initial wealth must be positive, got {x}")
    constraints = constraints or martingale_measure_constraints(model)
    rtol = settings.BISECTION_RTOL if rtol is None else rtol
    cache: Dict[float, DualSolution] = {}

    def dual_at(y: float) -> DualSolution:
        if y not in cache:
            cache[y] = solve_dual(model, U, P, y, constraints=constraints)
        return cache[y]

    def budget(y: float) -> float:
        return _budget(U, dual_at(y))[0]

    limit = 2.0 ** settings.BRACKET_LIMIT_LOG2
    lo, hi = settings.BRACKET_LOW, settings.BRACKET_HIGH
    while budget(lo) < x:
        lo /= 16.0
        if lo < 1.0 / limit:
            raise SolverFailure(f"cannot bracket the multiplier for x={x} from below")
    while budget(hi) > x:
        hi *= 16.0
        if hi > limit:
            raise SolverFailure(f"cannot bracket the multiplier for x={x} from above")

    steps = 0
    while True:
        y = math.sqrt(lo * hi)
        spent = budget(y)
        if abs(spent - x) <= rtol * x or hi / lo - 1.0 <= 1e-15:
            break
        if steps >= settings.BISECTION_MAX_ITER:
            raise SolverFailure(
                f"budget bisection for x={x} stopped after {steps} steps with mismatch {abs(spent - x):.3e}",
                residual=abs(spent - x),
                iterations=steps,
            )
        if spent > x:
            lo = y
        else:
            hi = y
        steps += 1

    dual = dual_at(y)
    spent, wealth = _budget(U, dual)
    value = P.expect(U.value(wealth))
    certificate = is_replicable(ClaimVector(model.space, wealth, "optimal wealth"), model)
    logger.debug("primal solved at x=%.6g after %d bisection steps: y*=%.12g, u=%.12g", x, steps, y, value)
    return PrimalSolution(
        x=float(x),
        terminal_wealth=wealth,
        strategy=None if certificate is None else certificate.strategy,
        value=value,
        y_star=y,
        dual=dual,
        budget_residual=abs(spent - x),
    )


def conjugacy_gap(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    y_grid: Iterable[float],
) -> float:
    """u(x) - min over y_grid and y* of (v(y) + x y); nonpositive up to solver noise."""
    constraints = martingale_measure_constraints(model)
    primal = solve_primal(model, U, P, x, constraints=constraints)
    candidates = [primal.dual.value + x * primal.y_star]
    for y in y_grid:
        candidates.append(solve_dual(model, U, P, y, constraints=constraints).value + x * y)
    return primal.value - min(candidates)


def _max_margin(G: np.ndarray, offset: np.ndarray, free: np.ndarray) -> tuple:
    """
    max t s.t. offset + G theta >= t on free states and >= 0 on the others.

    Returns (t, theta) with t capped at 1.
    """
    m = G.shape[1]
    margin = free.astype(float)[:, None]
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    result = linprog(
        cost,
        A_ub=np.hstack([-G, margin]),
        b_ub=offset + np.where(free, 0.0, settings.FEASIBILITY_TOLERANCE),
        bounds=[(None, None)] * m + [(None, 1.0)],
        method="highs",
    )
    if result.status != 0:
        raise SolverFailure(f"endowment feasibility LP failed: {result.message}")
    return float(result.x[-1]), result.x[:m]


def _forced_zero_states(G: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Mask of states whose terminal wealth is zero for every feasible strategy."""
    n, m = G.shape
    if m == 0:
        return offset <= FACE_TOLERANCE
    forced = np.zeros(n, dtype=bool)
    relaxed = offset + settings.FEASIBILITY_TOLERANCE
    for i in range(n):
        result = linprog(-G[i], A_ub=-G, b_ub=relaxed, bounds=[(None, None)] * m, method="highs")
        if result.status == 3:
            continue
        if result.status != 0:
            raise SolverFailure(f"endowment face LP failed: {result.message}")
        forced[i] = offset[i] + G[i] @ result.x <= FACE_TOLERANCE
    return forced


def solve_endowment(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    q: float,
    f: ClaimVector,
) -> EndowmentSolution:
    """
    Maximize E_P[U(x + G theta + q f)] over strategies with nonnegative terminal position.

    An empty feasible set gives value -inf. When some states are held at zero
    wealth by every feasible strategy, the value is -inf if U(0) = -inf in
    one of them; otherwise the problem is solved on the remaining states with
    those held at zero.
    """
    _check_inputs(model, U, P)
    if not f.space.same_as(model.space):
        raise SpaceMismatch("claim and model live on different spaces")
    G = gains_matrix(model)
    offset = float(x) + q * f.payoff
    n, m = G.shape

    everywhere = np.ones(n, dtype=bool)
    slack, theta0 = _max_margin(G, offset, everywhere) if m else (float(np.min(offset)), np.zeros(0))
    if slack < -settings.FEASIBILITY_TOLERANCE:
        return EndowmentSolution(-np.inf, None, None, 0, 0.0, False)

    free = everywhere
    if slack <= settings.FEASIBILITY_TOLERANCE:
        forced = _forced_zero_states(G, offset)
        if np.any(np.isneginf(U.value(np.zeros(n))[forced])):
            wealth = np.clip(offset + G @ theta0, 0.0, None)
            logger.debug("endowment problem only feasible where U(0) = -inf (x=%g, q=%g)", x, q)
            return EndowmentSolution(-np.inf, wealth, Strategy(model, theta0), 0, 0.0, True)
        free = ~forced
        logger.debug("endowment problem pinned to zero wealth on %d states (x=%g, q=%g)", int(forced.sum()), x, q)
        if m and free.any():
            slack, theta0 = _max_margin(G, offset, free)
            if slack <= FACE_TOLERANCE:
                raise SolverFailure(f"no relative interior point on the endowment face (margin {slack:.3e})")

    wealth = np.zeros(n)
    iterations, residual = 0, 0.0
    if free.any():
        # strategies that keep the pinned states at zero
        directions = null_space(G[~free]) if m and not free.all() else np.eye(m)
        span = G[free] @ directions
        basis = orth(span) if span.size else np.zeros((int(free.sum()), 0))
        weights = P.weights[free]

        def lift(w: np.ndarray) -> np.ndarray:
            full = np.ones(n)
            full[free] = w
            return full

        problem = SeparableProblem(
            phi=lambda w: -weights * U.value(lift(w))[free],
            dphi=lambda w: -weights * U.marginal(lift(w))[free],
            d2phi=lambda w: -weights * U.curvature(lift(w))[free],
            offset=offset[free] + G[free] @ theta0,
            basis=basis,
        )
        outcome = minimize_with_barrier(problem, tol=settings.ENDOWMENT_TOLERANCE)
        if not outcome.converged:
            raise SolverFailure(
                f"endowment solver stopped after {outcome.iterations} iterations with residual {outcome.residual:.3e}",
                residual=outcome.residual,
                iterations=outcome.iterations,
            )
        wealth[free] = outcome.w
        iterations, residual = outcome.iterations, outcome.residual
    theta = np.linalg.lstsq(G, wealth - offset, rcond=None)[0] if m else np.zeros(0)
    return EndowmentSolution(
        value=P.expect(U.value(wealth)),
        terminal_wealth=wealth,
        strategy=Strategy(model, theta),
        iterations=iterations,
        residual=residual,
        feasible=True,
    )


def primal_with_endowment(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    q: float,
    f: ClaimVector,
) -> float:
    """u(x, q): value of the endowment problem, -inf when infeasible."""
    return solve_endowment(model, U, P, x, q, f).value
