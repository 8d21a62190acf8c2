"""Tests for price processes, replication and the martingale polytope."""
import numpy as np
import pytest

from app.errors import InvalidNumeraire, ModelValidationError, NoArbitrageViolation
from app.market import (
    ClaimVector,
    MarketModel,
    Strategy,
    arbitrage_bounds,
    change_numeraire,
    extreme_points,
    gains_matrix,
    is_complete,
    is_replicable,
    martingale_measure_constraints,
    martingale_residual,
    random_replicable_claims,
    restore_numeraire,
    terminal_wealth,
    wealth_process,
)
from app.prob_space import FiniteFilteredSpace


@pytest.fixture
def two_period():
    """Recombining binomial tree with per-step moves 1.2 and 0.9."""
    space = FiniteFilteredSpace.from_branching([["u", "d"], ["u", "d"]])
    prices = {"root": 1.0, "u": 1.2, "d": 0.9, "uu": 1.44, "ud": 1.08, "du": 1.08, "dd": 0.81}
    return MarketModel.from_node_prices(space, {"S1": prices})


def test_prices_must_be_positive():
    """Test that nonpositive prices are rejected."""
    with pytest.raises(ModelValidationError):
        MarketModel.one_period(["a", "b"], 1.0, [2.0, 0.0])


def test_from_node_prices_needs_every_node():
    """Test that a missing intermediate price is reported."""
    space = FiniteFilteredSpace.from_branching([["u", "d"], ["u", "d"]])
    prices = {"root": 1.0, "u": 1.2, "uu": 1.44, "ud": 1.08, "du": 1.08, "dd": 0.81}
    with pytest.raises(ModelValidationError, match="missing nodes"):
        MarketModel.from_node_prices(space, {"S1": prices})


def test_gains_matrix_one_period(trinomial):
    """Test that gains are S_T - S_0 per outcome."""
    np.testing.assert_allclose(gains_matrix(trinomial), [[1.0], [0.0], [-0.5]])


def test_gains_matrix_two_period(two_period):
    """Test the column layout: one column per trading node."""
    G = gains_matrix(two_period)
    assert G.shape == (4, 3)
    np.testing.assert_allclose(G[0], [0.2, 0.24, 0.0])
    np.testing.assert_allclose(G[3], [-0.1, 0.0, -0.09])


def test_wealth_process(two_period):
    """Test self-financing wealth at every node."""
    H = Strategy.constant(two_period, [1.0])
    wealth = wealth_process(1.0, H, two_period)
    assert wealth["root"] == 1.0
    assert wealth["u"] == pytest.approx(1.2)
    assert wealth["dd"] == pytest.approx(0.81)
    np.testing.assert_allclose(terminal_wealth(1.0, H, two_period), [1.44, 1.08, 1.08, 0.81])


def test_replicable_claims(trinomial, digital, stock_claim):
    """Test replication certificates in an incomplete market."""
    certificate = is_replicable(stock_claim, trinomial)
    assert certificate is not None
    assert certificate.cost == pytest.approx(1.0)
    np.testing.assert_allclose(terminal_wealth(certificate.cost, certificate.strategy, trinomial), stock_claim.payoff)
    assert is_replicable(digital, trinomial) is None


def test_every_claim_replicable_when_complete(two_period):
    """Test that a complete tree replicates a call at its risk-neutral price."""
    call = ClaimVector(two_period.space, [0.44, 0.08, 0.08, 0.0], "call")
    certificate = is_replicable(call, two_period)
    assert certificate is not None
    assert certificate.cost == pytest.approx(0.76 / 9.0, abs=1e-12)


def test_martingale_constraints_trinomial(trinomial):
    """Test the polytope dimension and its interior point."""
    constraints = martingale_measure_constraints(trinomial)
    assert constraints.dimension == 1
    assert constraints.min_weight > 0
    assert constraints.residual(constraints.interior) < 1e-12
    assert martingale_residual(trinomial, constraints.interior) < 1e-12
    assert not is_complete(trinomial, constraints)


def test_complete_models(binomial, two_period):
    """Test completeness by the rank test."""
    assert is_complete(binomial)
    assert is_complete(two_period)


def test_no_arbitrage_violation():
    """Test that an asset that never loses is an arbitrage."""
    model = MarketModel.one_period(["up", "down"], 1.0, [2.0, 1.0])
    with pytest.raises(NoArbitrageViolation):
        martingale_measure_constraints(model)


def test_extreme_points(trinomial):
    """Test the vertices of the trinomial martingale segment."""
    vertices = extreme_points(martingale_measure_constraints(trinomial))
    expected = [[0.0, 1.0, 0.0], [1.0 / 3.0, 0.0, 2.0 / 3.0]]
    assert len(vertices) == 2
    for vertex in expected:
        assert any(np.allclose(vertex, v) for v in vertices)


def test_arbitrage_bounds(trinomial, digital, stock_claim):
    """Test super- and sub-replication prices."""
    low, high = arbitrage_bounds(digital, trinomial)
    assert low == pytest.approx(0.0, abs=1e-12)
    assert high == pytest.approx(1.0 / 3.0)
    low, high = arbitrage_bounds(stock_claim, trinomial)
    assert low == pytest.approx(1.0)
    assert high == pytest.approx(1.0)


def test_change_numeraire_round_trip(trinomial, digital):
    """Test that restoring the numeraire undoes the change."""
    converted_model, converted_claim = change_numeraire(trinomial, "S1", digital)
    np.testing.assert_allclose(converted_claim.payoff, [0.5, 0.0, 0.0])
    np.testing.assert_allclose(converted_model.terminal_prices(0), [0.5, 1.0, 2.0])
    restored_model, restored_claim = restore_numeraire(converted_model, "S1", converted_claim)
    np.testing.assert_allclose(restored_model.prices, trinomial.prices)
    np.testing.assert_allclose(restored_claim.payoff, digital.payoff)


def test_change_numeraire_keeps_no_arbitrage(trinomial, digital):
    """Test that the converted market is still arbitrage free and as incomplete."""
    converted_model, _ = change_numeraire(trinomial, 0, digital)
    assert martingale_measure_constraints(converted_model).dimension == 1


def test_unknown_numeraire(trinomial, digital):
    """Test numeraire validation."""
    with pytest.raises(InvalidNumeraire):
        change_numeraire(trinomial, "S9", digital)
    with pytest.raises(InvalidNumeraire):
        change_numeraire(trinomial, 3, digital)
    model, claim = change_numeraire(trinomial, "riskless", digital)
    assert model is trinomial and claim is digital


def test_random_replicable_claims(trinomial):
    """Test that generated claims replicate at their cost."""
    pairs = random_replicable_claims(trinomial, 5, np.random.default_rng(7))
    assert len(pairs) == 5
    for claim, cost in pairs:
        certificate = is_replicable(claim, trinomial)
        assert certificate is not None
        assert certificate.cost == pytest.approx(cost, abs=1e-10)
