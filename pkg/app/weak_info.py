"""Weak information: laws of random elements and their minimal measures."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from app.config import settings
from app.errors import CompletenessRequired, InvalidMeasure, LawMismatch, ModelValidationError, SpaceMismatch
from app.duality import solve_primal
from app.market import ClaimVector, MarketModel, is_complete
from app.preferences import UtilityField
from app.pricing import indifference_price
from app.prob_space import FiniteFilteredSpace, Measure

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RandomElement:
    """A label attached to every outcome; the label set is ordered by first appearance."""

    space: FiniteFilteredSpace
    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = self.labels
        if isinstance(labels, Mapping):
            missing = [w for w in self.space.outcomes if w not in labels]
            if missing:
                raise SpaceMismatch(f"random element is missing outcomes {missing}")
            labels = tuple(str(labels[w]) for w in self.space.outcomes)
        labels = tuple(str(label) for label in labels)
        if len(labels) != self.space.size:
            raise SpaceMismatch(f"expected {self.space.size} labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def identity(cls, space: FiniteFilteredSpace) -> "RandomElement":
        return cls(space, space.outcomes)

    @classmethod
    def constant(cls, space: FiniteFilteredSpace, label: str = "*") -> "RandomElement":
        return cls(space, (label,) * space.size)

    @property
    def label_set(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(self.labels))

    def indices(self, label: str) -> List[int]:
        return [i for i, value in enumerate(self.labels) if value == label]


@dataclass(frozen=True, eq=False)
class Law:
    """Probability weights on a finite label set."""

    labels: Tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(labels),) or len(set(labels)) != len(labels):
            raise ModelValidationError("law needs one weight per distinct label")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidMeasure("law weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > settings.MEASURE_TOLERANCE:
            raise InvalidMeasure(f"law weights sum to {weights.sum()!r}, not 1")
        weights = weights.copy()
        weights.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_mapping(cls, weights: Mapping[str, float]) -> "Law":
        return cls(tuple(weights), np.array([float(v) for v in weights.values()]))

    def __getitem__(self, label: str) -> float:
        try:
            return float(self.weights[self.labels.index(label)])
        except ValueError:
            raise LawMismatch(f"unknown label {label!r}") from None

    def aligned(self, labels: Sequence[str]) -> np.ndarray:
        """Weights reordered to ``labels``; the label sets must coincide."""
        if set(labels) != set(self.labels):
            raise LawMismatch(f"label sets differ: {sorted(self.labels)} vs {sorted(labels)}")
        return np.array([self[label] for label in labels])

    def as_dict(self) -> Dict[str, float]:
        return {label: float(w) for label, w in zip(self.labels, self.weights)}


def law_of(Y: RandomElement, P: Measure) -> Law:
    """Distribution of Y under P."""
    if not Y.space.same_as(P.space):
        raise SpaceMismatch("random element and measure live on different spaces")
    labels = Y.label_set
    return Law(labels, np.array([P.weights[Y.indices(label)].sum() for label in labels]))


def _check_equivalent(nu: Law, reference: Law) -> None:
    target = nu.aligned(reference.labels)
    if np.any((target > 0) != (reference.weights > 0)):
        raise LawMismatch("law is not equivalent to the reference law")


def minimal_measure(P: Measure, Y: RandomElement, nu: Law) -> Measure:
    """
    The measure keeping P's conditional laws given Y while giving Y the law nu.

    P^nu[w] = P[w] * nu(Y(w)) / P(Y = Y(w)).

    Raises:
        LawMismatch: nu is not equivalent to the P-law of Y
    """
    prior = law_of(Y, P)
    _check_equivalent(nu, prior)
    weights = np.zeros(P.space.size)
    for label, mass in zip(prior.labels, prior.weights):
        if mass <= 0:
            continue
        idx = Y.indices(label)
        weights[idx] = P.weights[idx] * (nu[label] / mass)
    return Measure(P.space, weights)


def perturbation_law(target: Law, start: Law, n: int) -> Law:
    """The mixture (1 - 1/n) target + (1/n) start."""
    if n < 1:
        raise ModelValidationError(f"perturbation index must be >= 1, got {n}")
    _check_equivalent(start, target)
    weight = 1.0 / n
    mixed = (1.0 - weight) * target.weights + weight * start.aligned(target.labels)
    return Law(target.labels, mixed / mixed.sum())


def perturbation_sequence(target: Law, start: Law, n_max: int, n_values: Optional[Sequence[int]] = None) -> List[Law]:
    """
    Laws nu_n for n = 1..n_max (or the given indices).

    Raises:
        LawMismatch: the two laws are not equivalent
    """
    _check_equivalent(start, target)
    indices = range(1, n_max + 1) if n_values is None else n_values
    return [perturbation_law(target, start, n) for n in indices]


def _require_complete(model: MarketModel) -> None:
    if not is_complete(model):
        raise CompletenessRequired("the value of weak information is only defined for complete models")


def value_of_weak_information(
    model: MarketModel,
    U: UtilityField,
    x: float,
    Y: RandomElement,
    nu: Law,
    P: Measure,
) -> float:
    """
    u(x, nu): maximal expected utility under the minimal measure P^nu.

    Raises:
        CompletenessRequired: the model is incomplete
    """
    _require_complete(model)
    return solve_primal(model, U, minimal_measure(P, Y, nu), x).value


def certainty_equivalent_gain(
    model: MarketModel,
    U: UtilityField,
    x: float,
    Y: RandomElement,
    nu: Law,
    P: Measure,
) -> float:
    """Extra initial capital c with u_P(x + c) = u(x, nu)."""
    _require_complete(model)
    target = value_of_weak_information(model, U, x, Y, nu, P)

    def shortfall(c: float) -> float:
        return solve_primal(model, U, P, x + c).value - target

    lo = -x * (1.0 - 1e-9)
    hi = x
    while shortfall(hi) < 0:
        hi *= 2.0
    if shortfall(lo) > 0:
        return lo
    return float(brentq(shortfall, lo, hi, xtol=1e-12, rtol=1e-12))


@dataclass(frozen=True)
class ClaimInformationValue:
    claim: str
    price_prior: float
    price_informed: float

    @property
    def difference(self) -> float:
        return self.price_informed - self.price_prior


def information_price_impact(
    model: MarketModel,
    U: UtilityField,
    x: float,
    Y: RandomElement,
    nu: Law,
    P: Measure,
    claims: Union[Mapping[str, ClaimVector], Sequence[ClaimVector]],
) -> List[ClaimInformationValue]:
    """
    Indifference prices of each claim without and with the weak information.

    Works in incomplete models. Invariant claims (and every claim of a
    complete model) have zero difference.
    """
    informed = minimal_measure(P, Y, nu)
    items = list(claims.values()) if isinstance(claims, Mapping) else list(claims)
    values = []
    for claim in items:
        prior = indifference_price(model, U, P, x, claim, verify=False)
        posterior = indifference_price(model, U, informed, x, claim, verify=False)
        values.append(ClaimInformationValue(claim.name, prior.price, posterior.price))
        logger.info("claim %s: price %.10g without, %.10g with weak information", claim.name, prior.price, posterior.price)
    return values
