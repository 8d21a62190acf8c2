"""
Convergence experiments under perturbations of the physical measure, and
truncated demonstrations of how stability breaks without integrability.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from sklearn.linear_model import LinearRegression

from app.concurrency import map_ordered
from app.config import settings
from app.duality import solve_dual, solve_primal
from app.errors import LabError, ModelValidationError
from app.market import ClaimVector, MarketModel, martingale_measure_constraints
from app.preferences import UtilityField
from app.pricing import indifference_price
from app.prob_space import Measure, mixture, product_space, tv_distance
from app.weak_info import Law, RandomElement, minimal_measure, perturbation_law, value_of_weak_information

logger = logging.getLogger(__name__)

GAP_COLUMNS = ("u_gap", "v_gap", "x_opt_gap", "y_opt_gap", "price_gap")
VERDICT_WINDOW = 3
MONOTONE_WINDOW = 5
MONOTONE_SLACK = 1e-12

ASSUMPTION_ASUI1 = "assumption_asUI1"
ASSUMPTION_ASUI = "assumption_asUI"
COUNTEREXAMPLES = (ASSUMPTION_ASUI1, ASSUMPTION_ASUI)
CONTROL_RATIO = 1.5


@dataclass
class ConvergenceReport:
    """
    Gaps between the perturbed and the limiting problem, one row per n.

    Columns that an experiment does not compute stay NaN. ``verdicts`` maps
    each computed column to whether its last few gaps are below tolerance.
    """

    experiment: str
    n_values: List[int] = field(default_factory=list)
    tv: List[float] = field(default_factory=list)
    gaps: Dict[str, List[float]] = field(default_factory=lambda: {name: [] for name in GAP_COLUMNS})
    verdicts: Dict[str, bool] = field(default_factory=dict)
    monotone_tail: Dict[str, bool] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)
    failures: List[Dict[str, object]] = field(default_factory=list)
    tolerance: float = 0.0

    def add_row(self, n: int, tv: float, **gaps: float) -> None:
        self.n_values.append(int(n))
        self.tv.append(float(tv))
        for name in GAP_COLUMNS:
            self.gaps[name].append(float(gaps.get(name, np.nan)))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.gaps[name], dtype=float)

    @property
    def computed_columns(self) -> Tuple[str, ...]:
        return tuple(name for name in GAP_COLUMNS if not np.all(np.isnan(self.column(name))))

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values()) and not self.failures

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"n": self.n_values, "tv": self.tv})
        for name in GAP_COLUMNS:
            frame[name] = self.gaps[name]
        return frame

    def finalize(self, tolerance: float) -> "ConvergenceReport":
        """Compute verdicts, tail monotonicity and the descriptive fits."""
        self.tolerance = float(tolerance)
        n = np.asarray(self.n_values, dtype=float)
        tv = np.asarray(self.tv, dtype=float)
        for name in self.computed_columns:
            gaps = self.column(name)
            tail = gaps[-VERDICT_WINDOW:]
            self.verdicts[name] = bool(len(tail) and np.all(np.isfinite(tail)) and np.all(tail < tolerance))
            window = gaps[-MONOTONE_WINDOW:]
            self.monotone_tail[name] = bool(np.all(np.diff(window) <= MONOTONE_SLACK))
            self.diagnostics.update(_fit_rates(name, n, tv, gaps))
        logger.info("%s convergence: verdicts %s", self.experiment, self.verdicts)
        return self


def _fit_rates(name: str, n: np.ndarray, tv: np.ndarray, gaps: np.ndarray) -> Dict[str, float]:
    """Log-log slope of the gap against n and the gap-to-TV constant."""
    fits: Dict[str, float] = {}
    usable = np.isfinite(gaps) & (gaps > 0) & (n > 0)
    if usable.sum() >= 2:
        regression = LinearRegression().fit(np.log(n[usable]).reshape(-1, 1), np.log(gaps[usable]))
        fits[f"{name}_slope"] = float(regression.coef_[0])
    usable &= tv > 0
    if usable.sum() >= 1:
        regression = LinearRegression(fit_intercept=False).fit(tv[usable].reshape(-1, 1), gaps[usable])
        fits[f"{name}_tv_constant"] = float(regression.coef_[0])
    return fits


def log_spaced(n_min: int, n_max: int, count: int) -> List[int]:
    """Distinct integers spread evenly in log scale over [n_min, n_max]."""
    if n_min < 1 or n_max < n_min or count < 1:
        raise ModelValidationError(f"invalid sweep range ({n_min}, {n_max}, {count})")
    points = np.unique(np.round(np.geomspace(n_min, n_max, count)).astype(int))
    return [int(v) for v in points]


def mixture_sequence(P: Measure, P0: Measure, n_values: Sequence[int]) -> List[Measure]:
    """P^n = (1 - 1/n) P + (1/n) P0 for each n."""
    return [mixture(P, P0, 1.0 / n) for n in n_values]


def _as_sequence(value, length: int) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != length:
            raise ModelValidationError(f"expected {length} entries, got {len(value)}")
        return list(value)
    return [value] * length


def _default_n(n_values: Optional[Sequence[int]], length: int) -> List[int]:
    n_values = list(range(1, length + 1)) if n_values is None else [int(n) for n in n_values]
    if len(n_values) != length:
        raise ModelValidationError("n_values and the measure sequence differ in length")
    return n_values


def _sweep(
    report: ConvergenceReport,
    n_values: Sequence[int],
    measures: Sequence[Measure],
    limit: Measure,
    step: Callable[[int], Dict[str, float]],
    max_workers: Optional[int],
) -> None:
    """Run step(i) for every index; solver errors become failures, not aborts."""

    def run(i: int):
        try:
            return step(i)
        except LabError as error:
            return error

    results = map_ordered(run, range(len(n_values)), max_workers)
    for n, measure, outcome in zip(n_values, measures, results):
        tv = tv_distance(measure, limit)
        if isinstance(outcome, LabError):
            logger.warning("%s: n=%d failed: %s", report.experiment, n, outcome)
            report.failures.append({"n": int(n), "error": type(outcome).__name__, "message": str(outcome)})
            report.add_row(n, tv)
        else:
            report.add_row(n, tv, **outcome)
    tv = np.asarray(report.tv)
    if len(tv) > 1 and tv[-1] > tv[0]:
        logger.warning("%s: total variation does not shrink along the sequence", report.experiment)


def run_value_convergence(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    P_sequence: Sequence[Measure],
    x: float,
    y: float,
    *,
    n_values: Optional[Sequence[int]] = None,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> ConvergenceReport:
    """
    |u_n(x) - u(x)| and |v_n(y) - v(y)| along a sequence of measures.

    Args:
        model: Market model
        U: Utility field
        P: Limiting measure
        P_sequence: Perturbed measures P^n, each equivalent
        x: Initial wealth
        y: Dual argument
        n_values: Index of each measure (default 1, 2, ...)
        tolerance: Gap tolerance of the verdict (default: settings.VALUE_GAP_TOLERANCE)

    Returns:
        ConvergenceReport with u_gap and v_gap
    """
    tolerance = settings.VALUE_GAP_TOLERANCE if tolerance is None else tolerance
    n_values = _default_n(n_values, len(P_sequence))
    constraints = martingale_measure_constraints(model)
    u_limit = solve_primal(model, U, P, x, constraints=constraints).value
    v_limit = solve_dual(model, U, P, y, constraints=constraints).value

    def step(i: int) -> Dict[str, float]:
        Pn = P_sequence[i]
        u_n = solve_primal(model, U, Pn, x, constraints=constraints).value
        v_n = solve_dual(model, U, Pn, y, constraints=constraints).value
        return {"u_gap": abs(u_n - u_limit), "v_gap": abs(v_n - v_limit)}

    report = ConvergenceReport("value")
    _sweep(report, n_values, P_sequence, P, step, max_workers)
    return report.finalize(tolerance)


def run_optimizer_convergence(
    model: MarketModel,
    U: UtilityField,
    P: Measure,
    P_sequence: Sequence[Measure],
    x_sequence: Union[float, Sequence[float]],
    x_limit: float,
    *,
    n_values: Optional[Sequence[int]] = None,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> ConvergenceReport:
    """
    Sup-norm gaps of the primal and dual optimizers.

    On a finite space with equivalent measures, convergence in probability
    of the optimizers is convergence on every atom, so the gaps are
    max_w |X^n_T(w) - X_T(w)| and max_w |Y^n_T(w) - Y_T(w)|, with the dual
    optimizers taken at the multipliers matching x_n and x_limit.
    """
    tolerance = settings.OPTIMIZER_GAP_TOLERANCE if tolerance is None else tolerance
    n_values = _default_n(n_values, len(P_sequence))
    x_sequence = _as_sequence(x_sequence, len(P_sequence))
    constraints = martingale_measure_constraints(model)
    limit = solve_primal(model, U, P, x_limit, constraints=constraints)

    def step(i: int) -> Dict[str, float]:
        solution = solve_primal(model, U, P_sequence[i], x_sequence[i], constraints=constraints)
        return {
            "x_opt_gap": float(np.max(np.abs(solution.terminal_wealth - limit.terminal_wealth))),
            "y_opt_gap": float(np.max(np.abs(solution.dual.deflator - limit.dual.deflator))),
        }

    report = ConvergenceReport("optimizer")
    _sweep(report, n_values, P_sequence, P, step, max_workers)
    return report.finalize(tolerance)


def run_price_convergence(
    model: MarketModel,
    U_sequence: Union[UtilityField, Sequence[UtilityField]],
    P_sequence: Sequence[Measure],
    x_sequence: Union[float, Sequence[float]],
    f: ClaimVector,
    *,
    limit: Tuple[float, UtilityField, Measure],
    n_values: Optional[Sequence[int]] = None,
    verify: bool = True,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> ConvergenceReport:
    """
    |p_n - p| for the indifference prices of f along a scenario sequence.

    ``limit`` is the (x, U, P) of the limiting problem. With ``verify`` the
    definitional check runs at every n and its worst slack is reported in
    the diagnostics.
    """
    tolerance = settings.PRICE_GAP_TOLERANCE if tolerance is None else tolerance
    length = len(P_sequence)
    n_values = _default_n(n_values, length)
    U_sequence = _as_sequence(U_sequence, length)
    x_sequence = _as_sequence(x_sequence, length)
    x_limit, U_limit, P_limit = limit
    p_limit = indifference_price(model, U_limit, P_limit, x_limit, f, verify=False).price
    slack: List[float] = []

    def step(i: int) -> Dict[str, float]:
        report = indifference_price(model, U_sequence[i], P_sequence[i], x_sequence[i], f, verify=verify)
        if report.definitional_check is not None:
            slack.append(report.definitional_check)
        return {"price_gap": abs(report.price - p_limit)}

    report = ConvergenceReport("price")
    _sweep(report, n_values, P_sequence, P_limit, step, max_workers)
    report.finalize(tolerance)
    report.diagnostics["limit_price"] = p_limit
    if verify and slack:
        worst = max(slack)
        report.diagnostics["max_definitional_slack"] = worst
        report.verdicts["definitional"] = worst <= settings.DEFINITIONAL_TOLERANCE
    return report


def run_weak_info_convergence(
    model: MarketModel,
    U: UtilityField,
    x: float,
    Y: RandomElement,
    nu_target: Law,
    nu_start: Law,
    P: Measure,
    n_values: Sequence[int],
    *,
    tolerance: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> ConvergenceReport:
    """
    |u(x, nu_n) - u(x, nu)| along nu_n = (1 - 1/n) nu + (1/n) nu_start.

    The tv column is the distance between the minimal measures of nu_n and nu.
    """
    tolerance = settings.VALUE_GAP_TOLERANCE if tolerance is None else tolerance
    target_measure = minimal_measure(P, Y, nu_target)
    u_limit = value_of_weak_information(model, U, x, Y, nu_target, P)
    laws = [perturbation_law(nu_target, nu_start, n) for n in n_values]
    measures = [minimal_measure(P, Y, law) for law in laws]

    def step(i: int) -> Dict[str, float]:
        return {"u_gap": abs(value_of_weak_information(model, U, x, Y, laws[i], P) - u_limit)}

    report = ConvergenceReport("weakinfo")
    _sweep(report, list(n_values), measures, target_measure, step, max_workers)
    return report.finalize(tolerance)


@dataclass(frozen=True)
class GaussianGridSpec:
    """
    Composite Gauss-Legendre grid on [-M, M] for standard normal integrals.

    Panels have width 1 / panels_per_unit so 0 is always a panel edge.
    """

    cutoffs: Tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0)
    panels_per_unit: int = 4
    order: int = 32

    def nodes(self, cutoff: float) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and log-weights including the Gaussian density."""
        base, base_weights = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(-cutoff, cutoff, int(round(2 * cutoff * self.panels_per_unit)) + 1)
        left, right = edges[:-1, None], edges[1:, None]
        half = 0.5 * (right - left)
        points = (left + half * (base + 1.0)).ravel()
        weights = (half * base_weights).ravel()
        log_weights = np.log(weights) - 0.5 * points ** 2 - 0.5 * np.log(2.0 * np.pi)
        return points, log_weights


@dataclass
class TruncationDemo:
    """Truncated Gaussian expectations over a sweep of cutoffs M."""

    which: str
    n: int
    terms: Optional[int]
    cutoffs: List[float]
    log_values: List[float]
    expect_divergence: bool
    parameters: Dict[str, float] = field(default_factory=dict)

    @property
    def values(self) -> List[float]:
        with np.errstate(over="ignore"):
            return [float(np.exp(v)) for v in self.log_values]

    @property
    def increasing(self) -> bool:
        return bool(np.all(np.diff(self.log_values) > 0))

    @property
    def ratio(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_values[-1] - self.log_values[0]))

    @property
    def diverges(self) -> bool:
        return self.increasing and self.ratio > settings.DIVERGENCE_RATIO

    @property
    def verdict(self) -> bool:
        """Divergence observed when expected, boundedness otherwise."""
        if self.expect_divergence:
            return self.diverges
        return self.ratio <= CONTROL_RATIO

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"M": self.cutoffs, "log_value": self.log_values, "value": self.values})


def _perturbed_series_log_integrand(w: np.ndarray, n: int, terms: int) -> np.ndarray:
    """
    log of Z^n(w) * phi_N(w).

    Z^n = sqrt(n / (n + 2)) exp(w^2 / (n + 2)) and
    phi_N = sum_{k <= N} 2^-k sqrt(2 / k) exp((1/2 - 1/k) w^2).
    """
    k = np.arange(1, terms + 1)[:, None]
    series = -k * np.log(2.0) + 0.5 * np.log(2.0 / k) + (0.5 - 1.0 / k) * w ** 2
    return 0.5 * np.log(n / (n + 2.0)) + w ** 2 / (n + 2.0) + logsumexp(series, axis=0)


def _cubic_tilt_log_integrand(w: np.ndarray, n: int, q: float, sharpe: float) -> np.ndarray:
    """log of exp(((q - 1) / n) w^3 1{w >= 0} + q (mu / sigma) w)."""
    return ((q - 1.0) / n) * np.where(w >= 0, w ** 3, 0.0) + q * sharpe * w


def counterexample_truncation(
    which: str,
    n: int,
    grid: Optional[GaussianGridSpec] = None,
    *,
    terms: int = 8,
    p: float = 0.75,
    sharpe: float = 0.5,
) -> TruncationDemo:
    """
    Truncated quadrature of the integrals that are infinite in the two
    counterexamples, over a sweep of Gaussian cutoffs.

    assumption_asUI1: E[Z^n phi_N] with the series truncated at N = terms.
        The k-th term has net exponent 1/(n+2) - 1/k in w^2, positive once
        k > n + 2, so the sweep grows without bound iff terms > n + 2.
    assumption_asUI: E[exp(((q-1)/n) W^3 1{W>=0} + q mu/sigma W)] with
        q = p / (1 - p); the cubic term wins for every n when q > 1.

    Sums run in log space, so overflow of the integrand only shows up as a
    large log value.
    """
    if which not in COUNTEREXAMPLES:
        raise ModelValidationError(f"unknown counterexample {which!r}; use one of {COUNTEREXAMPLES}")
    if n < 1:
        raise ModelValidationError(f"n must be >= 1, got {n}")
    grid = grid or GaussianGridSpec()
    if which == ASSUMPTION_ASUI1:
        if terms < 1:
            raise ModelValidationError(f"series needs at least one term, got {terms}")
        integrand = lambda w: _perturbed_series_log_integrand(w, n, terms)
        expect_divergence = terms > n + 2
        parameters = {"terms": float(terms)}
    else:
        if not 0.5 < p < 1.0:
            raise ModelValidationError(f"the cubic tilt needs p in (1/2, 1), got {p}")
        q = p / (1.0 - p)
        integrand = lambda w: _cubic_tilt_log_integrand(w, n, q, sharpe)
        expect_divergence = True
        parameters = {"p": p, "q": q, "sharpe": sharpe}

    log_values = []
    for cutoff in grid.cutoffs:
        points, log_weights = grid.nodes(cutoff)
        log_values.append(float(logsumexp(log_weights + integrand(points))))
    demo = TruncationDemo(
        which=which,
        n=int(n),
        terms=terms if which == ASSUMPTION_ASUI1 else None,
        cutoffs=[float(c) for c in grid.cutoffs],
        log_values=log_values,
        expect_divergence=expect_divergence,
        parameters=parameters,
    )
    logger.info("%s n=%d: ratio %.6g over cutoffs %s", which, n, demo.ratio, demo.cutoffs)
    return demo


W_LABELS = ("u", "d")
B_LABELS = ("u", "d")


def two_factor_model(s0: float = 1.0, up: float = 2.0, down: float = 0.5) -> MarketModel:
    """
    One asset driven by a W-coin, plus an independent B-coin it ignores.

    Outcomes are "<W><B>" labels: uu, ud, du, dd.
    """
    space = product_space(W_LABELS, B_LABELS)
    terminal = [up if label[0] == "u" else down for label in space.outcomes]
    prices = np.concatenate([[s0], terminal]).reshape(-1, 1)
    return MarketModel(space, ("S1",), prices)


def two_factor_measure(model: MarketModel, p_w: float, p_b: float = 0.5) -> Measure:
    """Product measure with P(W up) = p_w and P(B up) = p_b."""
    if not (0.0 < p_w < 1.0 and 0.0 < p_b < 1.0):
        raise ModelValidationError("factor probabilities must lie in (0, 1)")
    weights = [
        (p_w if label[0] == "u" else 1.0 - p_w) * (p_b if label[1] == "u" else 1.0 - p_b)
        for label in model.space.outcomes
    ]
    return Measure(model.space, weights)


def factor_indicator(model: MarketModel, factor: str) -> ClaimVector:
    """Indicator of "W up" (factor "W") or "B up" (factor "B")."""
    position = {"W": 0, "B": 1}[factor]
    payoff = [1.0 if label[position] == "u" else 0.0 for label in model.space.outcomes]
    return ClaimVector(model.space, payoff, f"{factor}_up")


def default_utility_panel(model: MarketModel) -> List[UtilityField]:
    return [
        UtilityField.log(model.space),
        UtilityField.power(model.space, 0.5),
        UtilityField.power(model.space, -1.0),
    ]


@dataclass
class TwoFactorReport:
    rows: List[Dict[str, object]]
    target: float
    spread: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.spread <= self.tolerance

    @property
    def control_prices(self) -> List[float]:
        return [float(row["price_w"]) for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def two_factor_invariance_demo(
    p_w_sequence: Sequence[float],
    utilities: Optional[Sequence[UtilityField]] = None,
    *,
    x: float = 1.0,
    p_b: float = 0.5,
    tolerance: Optional[float] = None,
    model: Optional[MarketModel] = None,
) -> TwoFactorReport:
    """
    Price the B-indicator for every drift and deterministic utility.

    With P a product measure and a deterministic utility, the dual optimizer
    only depends on W, so the B-marginal of the pricing measure stays p_b.
    The W-indicator is priced alongside as a control.
    """
    tolerance = settings.TWO_FACTOR_TOLERANCE if tolerance is None else tolerance
    model = model or two_factor_model()
    utilities = list(utilities) if utilities is not None else default_utility_panel(model)
    b_claim = factor_indicator(model, "B")
    w_claim = factor_indicator(model, "W")
    rows = []
    for p_w in p_w_sequence:
        P = two_factor_measure(model, p_w, p_b)
        for U in utilities:
            if not U.is_deterministic:
                raise ModelValidationError("the two-factor demo only admits deterministic utilities")
            solution = solve_primal(model, U, P, x)
            price_b = indifference_price(model, U, P, x, b_claim, verify=False, primal=solution).price
            price_w = indifference_price(model, U, P, x, w_claim, verify=False, primal=solution).price
            rows.append({"p_w": float(p_w), "utility": U.name, "price_b": price_b, "price_w": price_w})
    spread = max(abs(row["price_b"] - p_b) for row in rows) if rows else 0.0
    report = TwoFactorReport(rows, p_b, spread, tolerance)
    logger.info("two-factor demo: %d prices, spread %.3e", len(rows), spread)
    return report
