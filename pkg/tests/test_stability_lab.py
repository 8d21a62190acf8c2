"""Tests for convergence sweeps, counterexample quadrature and the two-factor demo."""
import numpy as np
import pytest
from scipy.special import logsumexp

from app.errors import ModelValidationError
from app.preferences import UtilityField
from app.prob_space import Measure, tv_distance
from app.stability_lab import (
    ASSUMPTION_ASUI,
    ASSUMPTION_ASUI1,
    GAP_COLUMNS,
    ConvergenceReport,
    GaussianGridSpec,
    counterexample_truncation,
    factor_indicator,
    log_spaced,
    mixture_sequence,
    run_optimizer_convergence,
    run_price_convergence,
    run_value_convergence,
    run_weak_info_convergence,
    two_factor_invariance_demo,
    two_factor_measure,
    two_factor_model,
)
from app.weak_info import Law, RandomElement


@pytest.fixture
def tilted(trinomial):
    return Measure(trinomial.space, [0.5, 0.3, 0.2])


@pytest.fixture
def sweep():
    return log_spaced(2, 100_000_000, 13)


def test_log_spaced():
    """Test the integer log grid."""
    grid = log_spaced(2, 1_000_000, 13)
    assert grid[0] == 2
    assert grid[-1] == 1_000_000
    assert grid == sorted(set(grid))
    assert log_spaced(1, 3, 10) == [1, 2, 3]
    with pytest.raises(ModelValidationError):
        log_spaced(10, 5, 3)


def test_mixture_sequence_tv(uniform, tilted):
    """Test that the n-th mixture sits at TV distance TV(P0, P) / n."""
    measures = mixture_sequence(uniform, tilted, [1, 10, 100])
    for n, measure in zip([1, 10, 100], measures):
        assert tv_distance(measure, uniform) == pytest.approx(tv_distance(tilted, uniform) / n)


def test_report_frame_and_verdicts():
    """Test verdict windows, monotone tails and unused columns."""
    report = ConvergenceReport("value")
    for n, gap in [(1, 1e-1), (10, 1e-2), (100, 1e-3), (1000, 1e-4), (10000, 1e-5)]:
        report.add_row(n, 1.0 / n, u_gap=gap)
    report.finalize(1e-2)
    assert report.computed_columns == ("u_gap",)
    assert report.verdicts == {"u_gap": True}
    assert report.monotone_tail == {"u_gap": True}
    assert report.diagnostics["u_gap_slope"] == pytest.approx(-1.0)
    assert report.diagnostics["u_gap_tv_constant"] == pytest.approx(0.1)
    frame = report.to_frame()
    assert list(frame.columns) == ["n", "tv", *GAP_COLUMNS]
    assert frame["v_gap"].isna().all()
    assert report.passed


def test_report_fails_on_large_tail():
    """Test that one large gap among the last three fails the verdict."""
    report = ConvergenceReport("value")
    for n, gap in [(1, 1.0), (2, 1e-9), (3, 1e-3), (4, 1e-9)]:
        report.add_row(n, 1.0 / n, u_gap=gap)
    report.finalize(1e-6)
    assert not report.verdicts["u_gap"]
    assert not report.passed


@pytest.mark.slow
def test_value_convergence(trinomial, log_utility, uniform, tilted, sweep):
    """Test that value gaps vanish at rate 1/n along mixtures."""
    report = run_value_convergence(
        trinomial, log_utility, uniform, mixture_sequence(uniform, tilted, sweep), 1.0, 1.0, n_values=sweep,
    )
    assert report.passed
    assert report.monotone_tail["u_gap"]
    assert report.monotone_tail["v_gap"]
    assert -1.3 < report.diagnostics["u_gap_slope"] < -0.7
    assert report.column("u_gap")[-1] < 1e-6


@pytest.mark.slow
def test_optimizer_convergence(trinomial, sqrt_utility, uniform, tilted, sweep):
    """Test sup-norm convergence of optimal wealth and deflators."""
    x_sequence = [1.0 + 1.0 / n for n in sweep]
    report = run_optimizer_convergence(
        trinomial, sqrt_utility, uniform, mixture_sequence(uniform, tilted, sweep), x_sequence, 1.0, n_values=sweep,
    )
    assert report.computed_columns == ("x_opt_gap", "y_opt_gap")
    assert report.passed


def test_price_convergence_with_verification(trinomial, log_utility, uniform, tilted, digital):
    """Test price gaps and the definitional check along a short sweep."""
    n_values = [10, 10_000, 100_000, 10_000_000]
    report = run_price_convergence(
        trinomial, log_utility, mixture_sequence(uniform, tilted, n_values), 1.0, digital,
        limit=(1.0, log_utility, uniform), n_values=n_values, verify=True, tolerance=1e-5,
    )
    assert report.diagnostics["limit_price"] == pytest.approx(2.0 / 9.0, abs=1e-8)
    assert report.verdicts["definitional"]
    assert report.verdicts["price_gap"]
    assert report.column("price_gap")[0] > report.column("price_gap")[-1]


def test_sweep_records_failures(trinomial, log_utility, uniform):
    """Test that a failing scenario is reported without aborting the sweep."""
    degenerate = Measure(trinomial.space, [0.5, 0.5, 0.0])
    report = run_value_convergence(trinomial, log_utility, uniform, [uniform, degenerate], 1.0, 1.0)
    assert len(report.failures) == 1
    assert report.failures[0]["n"] == 2
    assert report.failures[0]["error"] == "EquivalenceViolation"
    assert np.isnan(report.column("u_gap")[1])
    assert not report.passed


@pytest.mark.slow
def test_weak_info_convergence(binomial):
    """Test convergence of u(x, nu_n) on the complete binomial market."""
    Y = RandomElement.identity(binomial.space)
    report = run_weak_info_convergence(
        binomial,
        UtilityField.log(binomial.space),
        1.0,
        Y,
        Law.from_mapping({"up": 0.6, "down": 0.4}),
        Law.from_mapping({"up": 0.3, "down": 0.7}),
        Measure.uniform(binomial.space),
        log_spaced(2, 100_000_000, 9),
    )
    assert report.passed
    assert report.tv[-1] == pytest.approx(0.3 / 100_000_000)


def test_gaussian_grid_integrates_density():
    """Test that the quadrature weights integrate the normal density to 1."""
    points, log_weights = GaussianGridSpec().nodes(10.0)
    assert logsumexp(log_weights) == pytest.approx(0.0, abs=1e-12)
    assert np.exp(logsumexp(log_weights, b=points ** 2)) == pytest.approx(1.0, abs=1e-10)


def test_series_counterexample_diverges():
    """Test that more series terms than n + 2 blow up with the cutoff."""
    demo = counterexample_truncation(ASSUMPTION_ASUI1, 2, terms=8)
    assert demo.expect_divergence
    assert demo.increasing
    assert demo.diverges
    assert demo.verdict
    short = counterexample_truncation(ASSUMPTION_ASUI1, 2, GaussianGridSpec(cutoffs=(2.0, 4.0, 6.0, 8.0)), terms=8)
    np.testing.assert_allclose(short.values, [0.80993, 1.03967, 1.43679, 5.58161], rtol=1e-4)
    assert short.increasing
    # growth like exp(M^2 / 8) has not reached a factor 10 by M = 8
    assert short.ratio == pytest.approx(6.8914, rel=1e-4)
    assert not short.diverges


def test_series_control_stays_bounded():
    """Test that the truncation at N = n + 1 converges."""
    demo = counterexample_truncation(ASSUMPTION_ASUI1, 2, terms=3)
    assert not demo.expect_divergence
    assert demo.ratio <= 1.5
    assert not demo.diverges
    assert demo.verdict


def test_cubic_tilt_counterexample_diverges():
    """Test the dual counterexample for p = 3/4."""
    demo = counterexample_truncation(ASSUMPTION_ASUI, 3, GaussianGridSpec(cutoffs=(2.0, 4.0, 6.0, 8.0)), p=0.75)
    assert demo.parameters["q"] == pytest.approx(3.0)
    assert demo.diverges
    assert demo.verdict
    assert demo.terms is None
    frame = demo.to_frame()
    assert list(frame.columns) == ["M", "log_value", "value"]


def test_counterexample_arguments():
    """Test argument validation of the truncation demo."""
    with pytest.raises(ModelValidationError):
        counterexample_truncation("assumption_other", 2)
    with pytest.raises(ModelValidationError):
        counterexample_truncation(ASSUMPTION_ASUI, 2, p=0.4)
    with pytest.raises(ModelValidationError):
        counterexample_truncation(ASSUMPTION_ASUI1, 0)


def test_two_factor_measure():
    """Test the product measure and the factor indicators."""
    model = two_factor_model()
    P = two_factor_measure(model, 0.3)
    np.testing.assert_allclose(P.weights, [0.15, 0.15, 0.35, 0.35])
    np.testing.assert_allclose(factor_indicator(model, "B").payoff, [1.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(factor_indicator(model, "W").payoff, [1.0, 1.0, 0.0, 0.0])
    with pytest.raises(ModelValidationError):
        two_factor_measure(model, 1.0)


def test_two_factor_invariance():
    """Test that the B-indicator is priced at p_b for every drift and utility."""
    report = two_factor_invariance_demo([0.3, 0.5, 0.7])
    assert len(report.rows) == 9
    assert report.passed
    for row in report.rows:
        assert row["price_b"] == pytest.approx(0.5, abs=1e-7)
    for price in report.control_prices:
        assert price == pytest.approx(1.0 / 3.0, abs=1e-7)


def test_two_factor_rejects_stochastic_utility():
    """Test that the demo only admits deterministic utilities."""
    model = two_factor_model()
    field = UtilityField.log(model.space).with_scaling([1.0, 2.0, 1.0, 2.0])
    with pytest.raises(ModelValidationError):
        two_factor_invariance_demo([0.5], [field], model=model)
