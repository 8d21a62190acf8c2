"""Tests for the primal, dual and endowment problems."""
import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from app.config import settings
from app.duality import (
    conjugacy_gap,
    primal_with_endowment,
    solve_dual,
    solve_endowment,
    solve_primal,
)
from app.errors import DomainError, EquivalenceViolation, SolverFailure, SpaceMismatch
from app.market import ClaimVector, MarketModel, martingale_residual
from app.preferences import UtilityField, parse_utility
from app.prob_space import Density, FiniteFilteredSpace, Measure

LOG_Q_HAT = [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]
SQRT_T = 1.0 / (3.0 + math.sqrt(2.0))
SQRT_Q_HAT = [SQRT_T, 1.0 - 3.0 * SQRT_T, 2.0 * SQRT_T]


def test_dual_log_closed_form(trinomial, log_utility, uniform):
    """Test the log dual optimizer and value on the trinomial market."""
    dual = solve_dual(trinomial, log_utility, uniform, 2.0)
    np.testing.assert_allclose(dual.q_hat.weights, LOG_Q_HAT, atol=1e-8)
    expected = -math.log(2.0) - 1.0 + math.log(1.125) / 3.0
    assert dual.value == pytest.approx(expected, abs=1e-9)
    assert dual.feasibility_residual < 1e-10
    assert not dual.boundary_flag


def test_dual_sqrt_closed_form(trinomial, sqrt_utility, uniform):
    """Test the power(1/2) dual optimizer."""
    dual = solve_dual(trinomial, sqrt_utility, uniform, 1.0)
    np.testing.assert_allclose(dual.q_hat.weights, SQRT_Q_HAT, atol=1e-8)
    assert martingale_residual(trinomial, dual.q_hat.weights) < 1e-9


def test_dual_under_reference_density(trinomial, log_utility, uniform):
    """Test that a reference density poses the problem under P * Z."""
    tilted = Measure(trinomial.space, [0.5, 0.3, 0.2])
    reference = Density(uniform, tilted.weights / uniform.weights)
    composed = solve_dual(trinomial, log_utility, uniform, 1.0, reference=reference)
    direct = solve_dual(trinomial, log_utility, tilted, 1.0)
    np.testing.assert_allclose(composed.q_hat.weights, direct.q_hat.weights, atol=1e-8)
    assert composed.value == pytest.approx(direct.value, abs=1e-9)


def test_dual_domain(trinomial, log_utility, uniform):
    """Test that y must be positive and P equivalent."""
    with pytest.raises(DomainError):
        solve_dual(trinomial, log_utility, uniform, 0.0)
    with pytest.raises(EquivalenceViolation):
        solve_dual(trinomial, log_utility, Measure(trinomial.space, [0.5, 0.5, 0.0]), 1.0)


def test_dual_space_mismatch(trinomial, uniform):
    """Test that the utility must live on the model's space."""
    other = UtilityField.log(FiniteFilteredSpace.one_period(["a", "b", "c"]))
    with pytest.raises(SpaceMismatch):
        solve_dual(trinomial, other, uniform, 1.0)


@pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
def test_primal_log(trinomial, log_utility, uniform, x):
    """Test the log optimizer X = x / Z and y* = 1 / x."""
    primal = solve_primal(trinomial, log_utility, uniform, x)
    np.testing.assert_allclose(primal.terminal_wealth, x * np.array([1.5, 1.0, 0.75]), rtol=1e-8)
    assert primal.y_star == pytest.approx(1.0 / x, rel=1e-8)
    assert primal.value == pytest.approx(math.log(x) + math.log(1.125) / 3.0, abs=1e-9)
    assert primal.budget_residual <= 1e-9 * x
    assert primal.strategy is not None
    assert primal.strategy.holding("root")[0] == pytest.approx(0.5 * x, rel=1e-7)


def test_primal_budget_is_tight(trinomial, sqrt_utility, uniform):
    """Test that the optimal wealth costs exactly x under the pricing measure."""
    primal = solve_primal(trinomial, sqrt_utility, uniform, 2.0)
    assert primal.dual.q_hat.expect(primal.terminal_wealth) == pytest.approx(2.0, rel=1e-9)
    assert set(primal.wealth_map()) == {"w1", "w2", "w3"}


def test_primal_rejects_nonpositive_wealth(trinomial, log_utility, uniform):
    """Test the domain of the primal problem."""
    with pytest.raises(DomainError):
        solve_primal(trinomial, log_utility, uniform, 0.0)


def test_primal_complete_two_period():
    """Test that the pricing measure of a complete tree is the risk-neutral one."""
    space = FiniteFilteredSpace.from_branching([["u", "d"], ["u", "d"]])
    prices = {"root": 1.0, "u": 1.2, "d": 0.9, "uu": 1.44, "ud": 1.08, "du": 1.08, "dd": 0.81}
    model = MarketModel.from_node_prices(space, {"S1": prices})
    U = UtilityField.power(space, -1.0)
    primal = solve_primal(model, U, Measure.uniform(space), 1.0)
    np.testing.assert_allclose(primal.dual.q_hat.weights, [1 / 9, 2 / 9, 2 / 9, 4 / 9], atol=1e-8)


@pytest.mark.parametrize("utility", ["log", "sqrt"])
def test_conjugacy_gap(trinomial, uniform, utility):
    """Test u(x) = min_y v(y) + x y up to solver noise."""
    U = parse_utility(trinomial.space, utility)
    gap = conjugacy_gap(trinomial, U, uniform, 1.0, [0.25, 0.5, 1.0, 2.0, 4.0])
    assert -1e-8 <= gap <= 1e-8


def test_endowment_without_claim_matches_primal(trinomial, log_utility, uniform, digital):
    """Test u(x, 0) = u(x)."""
    endowment = solve_endowment(trinomial, log_utility, uniform, 1.0, 0.0, digital)
    assert endowment.feasible
    assert endowment.value == pytest.approx(solve_primal(trinomial, log_utility, uniform, 1.0).value, abs=1e-8)


def test_endowment_infeasible(trinomial, log_utility, uniform, digital):
    """Test that a short position nothing can cover has value -inf."""
    endowment = solve_endowment(trinomial, log_utility, uniform, 1.0, -10.0, digital)
    assert not endowment.feasible
    assert endowment.value == -np.inf
    assert primal_with_endowment(trinomial, log_utility, uniform, 1.0, -10.0, digital) == -np.inf


def test_endowment_boundary_only(trinomial, log_utility, uniform):
    """Test the value on a feasible set that touches zero wealth only."""
    ones = ClaimVector(trinomial.space, [1.0, 1.0, 1.0], "const")
    endowment = solve_endowment(trinomial, log_utility, uniform, 1.0, -1.0, ones)
    assert endowment.feasible
    assert endowment.value == -np.inf


def test_endowment_face_maximized_for_sqrt(trinomial, sqrt_utility, uniform):
    """Test that a state pinned at zero wealth leaves the others free to optimize."""
    payoff = ClaimVector(trinomial.space, [1.0, 0.0, 1.0], "wings")
    endowment = solve_endowment(trinomial, sqrt_utility, uniform, 0.0, 1.0, payoff)
    # wealth (1 + theta, 0, 1 - theta / 2) is best at theta = 1
    assert endowment.feasible
    assert endowment.value == pytest.approx(math.sqrt(2.0), abs=1e-8)
    np.testing.assert_allclose(endowment.terminal_wealth, [2.0, 0.0, 0.5], atol=1e-7)
    assert endowment.strategy.holdings[0, 0] == pytest.approx(1.0, abs=1e-7)


def test_endowment_face_matches_scalar_search(trinomial, uniform):
    """Test the pinned-state value against a bounded search over the holding."""
    U = UtilityField.power(trinomial.space, 0.3)
    payoff = ClaimVector(trinomial.space, [0.5, 0.0, 2.0], "skew")

    def negative_value(theta):
        wealth = np.array([0.5 + theta, 0.0, 2.0 - 0.5 * theta])
        return -float(np.dot(uniform.weights, U.value(wealth)))

    search = minimize_scalar(negative_value, bounds=(-0.5, 4.0), method="bounded", options={"xatol": 1e-12})
    endowment = solve_endowment(trinomial, U, uniform, 0.0, 1.0, payoff)
    assert endowment.value == pytest.approx(-search.fun, abs=1e-8)


def test_endowment_all_states_pinned(trinomial, sqrt_utility, uniform):
    """Test that a face of zero wealth everywhere has value U(0) = 0 for p > 0."""
    ones = ClaimVector(trinomial.space, [1.0, 1.0, 1.0], "const")
    endowment = solve_endowment(trinomial, sqrt_utility, uniform, 1.0, -1.0, ones)
    assert endowment.feasible
    assert endowment.value == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(endowment.terminal_wealth, 0.0, atol=1e-12)


def test_primal_bisection_cap(trinomial, log_utility, uniform, monkeypatch):
    """Test that a bisection that cannot meet its tolerance stops with SolverFailure."""
    monkeypatch.setattr(settings, "BISECTION_MAX_ITER", 3)
    with pytest.raises(SolverFailure) as excinfo:
        solve_primal(trinomial, log_utility, uniform, 1.0, rtol=0.0)
    assert excinfo.value.iterations == 3


def test_endowment_long_claim_increases_value(trinomial, log_utility, uniform, digital):
    """Test monotonicity of u(x, q) in q for a nonnegative claim."""
    values = [primal_with_endowment(trinomial, log_utility, uniform, 1.0, q, digital) for q in (0.0, 0.5, 1.0)]
    assert values[0] < values[1] < values[2]


@pytest.mark.slow
def test_conjugacy_on_random_models():
    """Test u(x) = v(y*) + x y* on seeded random one-period markets."""
    rng = np.random.default_rng(11)
    for k in range(25):
        size = int(rng.integers(2, 6))
        outcomes = [f"s{i}" for i in range(size)]
        terminal = np.exp(rng.normal(scale=0.4, size=size))
        terminal[0], terminal[1] = 1.5, 0.7
        model = MarketModel.one_period(outcomes, 1.0, terminal)
        P = Measure(model.space, rng.dirichlet(np.full(size, 5.0)))
        for utility in ("log", "sqrt"):
            U = parse_utility(model.space, utility)
            for x in (0.5, 1.0, 2.0):
                gap = conjugacy_gap(model, U, P, x, [1.0])
                assert abs(gap) <= 1e-7, (k, utility, x, gap)


def test_dual_matches_scalar_search(trinomial, log_utility, uniform):
    """Test the Newton dual against a 1-D search over the last weight of the polytope."""

    def objective(q3):
        q = np.array([q3 / 2.0, 1.0 - 1.5 * q3, q3])
        return float(np.sum(uniform.weights * -np.log(q / uniform.weights)))

    search = minimize_scalar(objective, bounds=(1e-9, 2.0 / 3.0 - 1e-9), method="bounded", options={"xatol": 1e-12})
    dual = solve_dual(trinomial, log_utility, uniform, 1.0)
    assert search.x == pytest.approx(4.0 / 9.0, abs=1e-7)
    assert dual.q_hat["w3"] == pytest.approx(search.x, abs=1e-7)


def test_conjugacy_on_random_two_period_trees():
    """Test u(x) = v(y*) + x y* on seeded random two-period binomial trees."""
    rng = np.random.default_rng(13)
    space = FiniteFilteredSpace.from_branching([["u", "d"], ["u", "d"]])
    for _ in range(5):
        up, down = rng.uniform(1.05, 1.5), rng.uniform(0.6, 0.95)
        prices = {"root": 1.0, "u": up, "d": down, "uu": up * up, "ud": up * down, "du": down * up, "dd": down * down}
        model = MarketModel.from_node_prices(space, {"S1": prices})
        P = Measure(space, rng.dirichlet(np.full(4, 5.0)))
        for utility in ("log", "sqrt"):
            U = parse_utility(space, utility)
            for x in (0.5, 1.0, 2.0):
                assert abs(conjugacy_gap(model, U, P, x, [1.0])) <= 1e-7
