"""Indifference prices, their definitional verification and invariance analysis."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import null_space, orth

from app.concurrency import map_ordered
from app.config import settings
from app.duality import PrimalSolution, primal_with_endowment, solve_dual, solve_primal
from app.errors import InconclusiveBasis, MartingalePropertyViolation, WitnessUnavailable
from app.market import (
    ClaimVector,
    MarketModel,
    asset_position,
    change_numeraire,
    gains_matrix,
    martingale_measure_constraints,
    martingale_residual,
)
from app.preferences import UtilityField
from app.prob_space import Density, Measure

logger = logging.getLogger(__name__)

DEFAULT_Q_GRID = (1.0, -1.0, 0.5, -0.5, 0.1, -0.1, 0.01, -0.01)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One (initial wealth, utility, physical measure) triple."""

    x: float
    utility: UtilityField
    measure: Measure
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or f"x={self.x:g}/{self.utility.name}"


@dataclass(frozen=True, eq=False)
class PriceReport:
    """Indifference price with its representation and verification evidence."""

    claim: str
    price: float
    x: float
    y_star: float
    pricing_density: Density
    q_hat: Measure
    martingale_certificate: float
    definitional_check: Optional[float] = None
    definitional_slack: Dict[float, float] = field(default_factory=dict)
    utility: str = ""

    @property
    def definitional_passed(self) -> Optional[bool]:
        if self.definitional_check is None:
            return None
        return self.definitional_check <= settings.DEFINITIONAL_TOLERANCE


def _certify(model: MarketModel, primal: PrimalSolution) -> float:
    z = primal.dual.z_hat
    mass = float(np.dot(z.base.weights, z.values))
    if np.any(z.values < 0) or abs(mass - 1.0) > 1e-10:
        raise MartingalePropertyViolation(f"pricing density has mass {mass!r}")
    certificate = martingale_residual(model, primal.dual.q_hat.weights)
    if certificate > settings.MARTINGALE_TOLERANCE:
        raise MartingalePropertyViolation(f"pricing density martingale residual {certificate:.3e}")
    return certificate


def definitional_slack(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    f: ClaimVector,
    price: float,
    q_grid: Sequence[float] = DEFAULT_Q_GRID,
    base_value: Optional[float] = None,
) -> Dict[float, float]:
    """
    u(x - q * price, q) - u(x, 0) for each q on the grid.

    A price satisfies the indifference definition when every slack is
    nonpositive up to solver tolerance.
    """
    if base_value is None:
        base_value = solve_primal(model, U, P, x).value
    return {q: primal_with_endowment(model, U, P, x - q * price, q, f) - base_value for q in q_grid}


def uniqueness_probe(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    f: ClaimVector,
    price: float,
    delta: Optional[float] = None,
    q_grid: Sequence[float] = DEFAULT_Q_GRID,
) -> bool:
    """True when both price + delta and price - delta fail the definitional check."""
    delta = settings.UNIQUENESS_PROBE if delta is None else delta
    base_value = solve_primal(model, U, P, x).value
    tolerance = settings.DEFINITIONAL_TOLERANCE
    for shifted in (price + delta, price - delta):
        slack = definitional_slack(model, U, P, x, f, shifted, q_grid, base_value)
        if max(slack.values()) <= tolerance:
            return False
    return True


def indifference_price(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    f: ClaimVector,
    *,
    verify: bool = True,
    q_grid: Sequence[float] = DEFAULT_Q_GRID,
    primal: Optional[PrimalSolution] = None,
) -> PriceReport:
    """
    Indifference price E_Q[f] under the dual optimizer at y = u'(x).

    Args:
        model: Market model
        U: Utility field
        P: Physical measure
        x: Initial wealth
        f: Claim
        verify: Run the definitional check over ``q_grid``
        q_grid: Quantities for the definitional check
        primal: Reuse an existing primal solution for (model, U, P, x)

    Returns:
        PriceReport

    Raises:
        MartingalePropertyViolation: the pricing density fails its certificate
    """
    primal = primal or solve_primal(model, U, P, x)
    certificate = _certify(model, primal)
    price = float(np.dot(primal.dual.q_hat.weights, f.payoff))
    slack: Dict[float, float] = {}
    worst = None
    if verify:
        slack = definitional_slack(model, U, P, x, f, price, q_grid, primal.value)
        worst = max(slack.values())
        if worst > settings.DEFINITIONAL_TOLERANCE:
            logger.warning("claim %s: definitional slack %.3e above tolerance", f.name, worst)
    logger.info("claim %s priced at %.12g (x=%g, %s)", f.name, price, x, U.name)
    return PriceReport(
        claim=f.name,
        price=price,
        x=float(x),
        y_star=primal.y_star,
        pricing_density=primal.dual.z_hat,
        q_hat=primal.dual.q_hat,
        martingale_certificate=certificate,
        definitional_check=worst,
        definitional_slack=slack,
        utility=U.name,
    )


def scenario_solutions(
    model: MarketModel,
    scenarios: Sequence[Scenario],
    max_workers: Optional[int] = None,
) -> List[PrimalSolution]:
    """Primal solutions per scenario, in scenario order."""
    constraints = martingale_measure_constraints(model)

    def solve(scenario: Scenario) -> PrimalSolution:
        return solve_primal(model, scenario.utility, scenario.measure, scenario.x, constraints=constraints)

    return map_ordered(solve, scenarios, max_workers)


@dataclass(frozen=True)
class InvarianceResult:
    invariant: bool
    spread: float
    prices: Tuple[float, ...]
    tolerance: float


def invariance_check(
    f: ClaimVector,
    scenarios: Sequence[Scenario],
    model: MarketModel,
    *,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> InvarianceResult:
    """
    Compare the indifference prices of f across scenarios.

    The claim is invariant when max - min of the prices is at most
    tolerance * (1 + |f|_inf).
    """
    tolerance = settings.INVARIANCE_TOLERANCE if tolerance is None else tolerance
    solutions = scenario_solutions(model, scenarios, max_workers)
    prices = tuple(
        indifference_price(model, s.utility, s.measure, s.x, f, verify=False, primal=sol).price
        for s, sol in zip(scenarios, solutions)
    )
    spread = max(prices) - min(prices)
    threshold = tolerance * (1.0 + f.sup_norm)
    return InvarianceResult(spread <= threshold, spread, prices, threshold)


def invariance_table(
    claims: Union[Mapping[str, ClaimVector], Sequence[ClaimVector]],
    scenarios: Sequence[Scenario],
    model: MarketModel,
    *,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    Prices of many claims across scenarios, one dual solve per scenario.

    Returns:
        DataFrame indexed by claim name with one column per scenario plus
        ``spread``, ``threshold`` and ``invariant``
    """
    tolerance = settings.INVARIANCE_TOLERANCE if tolerance is None else tolerance
    items = list(claims.values()) if isinstance(claims, Mapping) else list(claims)
    solutions = scenario_solutions(model, scenarios, max_workers)
    for solution in solutions:
        _certify(model, solution)
    columns = [s.name for s in scenarios]
    rows = []
    for claim in items:
        prices = [float(np.dot(sol.dual.q_hat.weights, claim.payoff)) for sol in solutions]
        spread = max(prices) - min(prices)
        threshold = tolerance * (1.0 + claim.sup_norm)
        rows.append([claim.name, *prices, spread, threshold, spread <= threshold])
    frame = pd.DataFrame(rows, columns=["claim", *columns, "spread", "threshold", "invariant"])
    return frame.set_index("claim")


@dataclass(frozen=True, eq=False)
class InvariantSubspace:
    """
    Claims whose price agrees across all sampled pricing measures.

    Attributes:
        basis: Orthonormal rows spanning the subspace
        replicable_basis: Orthonormal rows spanning the replicable claims
        inconclusive: True when the sample could not separate any claims
    """

    basis: np.ndarray
    replicable_basis: np.ndarray
    inconclusive: bool = False

    @property
    def dimension(self) -> int:
        return int(self.basis.shape[0])

    @property
    def replicable_dimension(self) -> int:
        return int(self.replicable_basis.shape[0])

    def contains(self, payoff: np.ndarray, tol: float = 1e-8) -> bool:
        payoff = np.asarray(payoff, dtype=float)
        projection = self.basis.T @ (self.basis @ payoff)
        return float(np.max(np.abs(payoff - projection))) <= tol * (1.0 + float(np.max(np.abs(payoff))))


def replicable_span(model: MarketModel) -> np.ndarray:
    """Orthonormal rows spanning {x + G theta}."""
    system = np.hstack([np.ones((model.space.size, 1)), gains_matrix(model)])
    return orth(system).T


def invariant_claim_basis(
    model: MarketModel,
    scenario_sample: Sequence[Scenario],
    *,
    strict: bool = True,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> InvariantSubspace:
    """
    Orthogonal complement of the differences of sampled pricing measures.

    Args:
        model: Market model
        scenario_sample: Scenarios whose pricing measures are compared
        strict: Raise InconclusiveBasis instead of returning a flagged result
        tolerance: Singular-value cutoff for the differences (default: settings.BASIS_TOLERANCE)

    Raises:
        InconclusiveBasis: incomplete model and all sampled measures coincide
    """
    tolerance = settings.BASIS_TOLERANCE if tolerance is None else tolerance
    n = model.space.size
    replicable = replicable_span(model)
    constraints = martingale_measure_constraints(model)
    if constraints.dimension == 0:
        return InvariantSubspace(np.eye(n), replicable)

    solutions = scenario_solutions(model, scenario_sample, max_workers)
    measures = np.array([sol.dual.q_hat.weights for sol in solutions])
    differences = measures[1:] - measures[0] if len(measures) > 1 else np.zeros((0, n))
    if differences.size:
        u, singular, vt = np.linalg.svd(differences)
        rank = int(np.sum(singular > tolerance))
        directions = vt[:rank]
    else:
        directions = np.zeros((0, n))

    if directions.shape[0] == 0:
        subspace = InvariantSubspace(np.eye(n), replicable, inconclusive=True)
        message = "all sampled pricing measures coincide in an incomplete model"
        if strict:
            raise InconclusiveBasis(message, subspace)
        logger.warning(message)
        return subspace
    complement = null_space(directions).T
    logger.info("invariant subspace of dimension %d (replicable %d)", complement.shape[0], replicable.shape[0])
    return InvariantSubspace(complement, replicable)


def price_via_numeraire(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    x: float,
    f: ClaimVector,
    asset: Union[int, str],
    *,
    verify: bool = False,
) -> PriceReport:
    """
    Price f after changing the numeraire to a risky asset.

    Wealth and the claim are expressed in units of the asset, the utility
    becomes x -> U(S_T x), and the resulting price is converted back with
    the asset's initial price.
    """
    tilde_model, tilde_claim = change_numeraire(model, asset, f)
    position = asset_position(model, asset)
    if position is None:
        return indifference_price(model, U, P, x, f, verify=verify)
    s0 = float(model.price(model.space.root)[position])
    tilde_utility = U.rescaled(model.terminal_prices(position))
    report = indifference_price(tilde_model, tilde_utility, P, x / s0, tilde_claim, verify=verify)
    return PriceReport(
        claim=f.name,
        price=report.price * s0,
        x=float(x),
        y_star=report.y_star / s0,
        pricing_density=report.pricing_density,
        q_hat=report.q_hat,
        martingale_certificate=report.martingale_certificate,
        definitional_check=report.definitional_check,
        definitional_slack=report.definitional_slack,
        utility=U.name,
    )


@dataclass(frozen=True, eq=False)
class WitnessReport:
    """Two utilities and a claim whose indifference prices differ."""

    base_utility: UtilityField
    wrapped_utility: UtilityField
    alpha: float
    claim: ClaimVector
    wealth_base: float
    wealth_wrapped: float
    price_base: float
    price_wrapped: float

    @property
    def difference(self) -> float:
        return self.price_base - self.price_wrapped


def non_invariance_witness(
    model: MarketModel,
    P: Measure,
    base: Optional[UtilityField] = None,
) -> WitnessReport:
    """
    Build a claim that is not price invariant in an incomplete model.

    Starting from the dual optimizer Y of a deterministic utility at y = 1
    and a second strictly positive martingale density Y', the utility is
    scaled by alpha on {Y' <= Y}; alpha balances the conjugate gains on the
    two sides so Y stops being optimal. The claim
    min(1, I(Y), I(Y_bar)) on {Y > Y_bar}, with Y_bar the new optimizer,
    is bounded by both optimal wealths and is priced differently by the
    two utilities.

    Raises:
        WitnessUnavailable: the model is complete
    """
    constraints = martingale_measure_constraints(model)
    if constraints.dimension == 0:
        raise WitnessUnavailable("complete model: every claim is price invariant")
    base = base or UtilityField.power(model.space, -1.0)
    weights = P.weights

    optimum = solve_dual(model, base, P, 1.0, constraints=constraints)
    q_hat = optimum.q_hat.weights
    direction = constraints.null_basis[:, 0]
    falling = direction < 0
    step = 0.5 * float(np.min(q_hat[falling] / -direction[falling])) if np.any(falling) else 1.0
    other = q_hat + step * direction
    z_hat, z_other = q_hat / weights, other / weights

    V = base.conjugate()
    gain = V.value(z_hat) - V.value(z_other)
    above = z_other > z_hat
    alpha = 0.5 * float(np.dot(weights[above], gain[above])) / float(np.dot(weights[~above], -gain[~above]))
    wrapped = base.with_scaling(np.where(above, 1.0, alpha))

    competitor = solve_dual(model, wrapped, P, 1.0, constraints=constraints)
    z_bar = competitor.z_hat.values
    indicator = z_hat > z_bar + 1e-12
    payoff = np.where(
        indicator,
        np.minimum.reduce([np.ones_like(z_hat), base.inverse_marginal(z_hat), wrapped.inverse_marginal(z_bar)]),
        0.0,
    )
    claim = ClaimVector(model.space, payoff, "witness")

    wealth_base = float(np.dot(q_hat, base.inverse_marginal(z_hat)))
    wealth_wrapped = float(np.dot(competitor.q_hat.weights, wrapped.inverse_marginal(z_bar)))
    price_base = indifference_price(model, base, P, wealth_base, claim, verify=False).price
    price_wrapped = indifference_price(model, wrapped, P, wealth_wrapped, claim, verify=False).price
    logger.info("non-invariance witness: prices %.10g vs %.10g (alpha=%.6g)", price_base, price_wrapped, alpha)
    return WitnessReport(base, wrapped, alpha, claim, wealth_base, wealth_wrapped, price_base, price_wrapped)
