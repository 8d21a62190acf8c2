"""Finite filtered probability spaces, measures, densities and total variation."""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.errors import (
    DegenerateConditioning,
    EquivalenceViolation,
    InvalidMeasure,
    ModelValidationError,
    SpaceMismatch,
)

logger = logging.getLogger(__name__)

ROOT = "root"

OutcomeValues = Union[Mapping[str, float], Sequence[float], np.ndarray]


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FiniteFilteredSpace:
    """
    Event tree whose leaves are the outcomes.

    Nodes are identified by string labels. The depth-t nodes form the
    partition generating the filtration at time t; the root is time 0.
    """

    outcomes: Tuple[str, ...]
    children: Mapping[str, Tuple[str, ...]]
    root: str = ROOT
    parent: Dict[str, str] = field(init=False, repr=False)
    depth: Dict[str, int] = field(init=False, repr=False)
    nodes: Tuple[str, ...] = field(init=False, repr=False)
    horizon: int = field(init=False)
    _leaves: Dict[str, Tuple[int, ...]] = field(init=False, repr=False)
    _paths: Dict[str, Tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        if len(outcomes) < 2:
            raise ModelValidationError("a space needs at least 2 outcomes")
        if len(set(outcomes)) != len(outcomes):
            raise ModelValidationError("outcome labels must be unique")
        children = {node: tuple(kids) for node, kids in self.children.items() if kids}

        parent: Dict[str, str] = {}
        depth = {self.root: 0}
        order = [self.root]
        cursor = 0
        while cursor < len(order):
            node = order[cursor]
            cursor += 1
            for child in children.get(node, ()):
                if child in parent or child == self.root:
                    raise ModelValidationError(f"node {child!r} is reachable by more than one path")
                parent[child] = node
                depth[child] = depth[node] + 1
                order.append(child)

        unreachable = set(children) - set(order)
        if unreachable:
            raise ModelValidationError(f"nodes not reachable from the root: {sorted(unreachable)}")
        leaves = [node for node in order if node not in children]
        if set(leaves) != set(outcomes):
            raise ModelValidationError(
                f"tree leaves {sorted(leaves)} do not match outcomes {sorted(outcomes)}"
            )
        horizons = {depth[leaf] for leaf in leaves}
        if len(horizons) != 1:
            raise ModelValidationError("leaves must sit at a uniform depth")
        horizon = horizons.pop()
        if horizon < 1:
            raise ModelValidationError("horizon must be at least 1")

        index = {label: i for i, label in enumerate(outcomes)}
        paths: Dict[str, Tuple[str, ...]] = {}
        for leaf in outcomes:
            path = [leaf]
            while path[-1] != self.root:
                path.append(parent[path[-1]])
            paths[leaf] = tuple(reversed(path))
        below: Dict[str, List[int]] = {node: [] for node in order}
        for leaf in outcomes:
            for node in paths[leaf]:
                below[node].append(index[leaf])

        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "nodes", tuple(order))
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "_leaves", {node: tuple(ix) for node, ix in below.items()})
        object.__setattr__(self, "_paths", paths)

    @classmethod
    def from_edges(cls, outcomes: Sequence[str], edges: Iterable[Tuple[str, str]], root: str = ROOT) -> "FiniteFilteredSpace":
        """Build a space from (parent, child) edges; child order follows edge order."""
        children: "OrderedDict[str, List[str]]" = OrderedDict()
        for parent_node, child in edges:
            children.setdefault(parent_node, []).append(child)
        return cls(tuple(outcomes), {k: tuple(v) for k, v in children.items()}, root)

    @classmethod
    def one_period(cls, outcomes: Sequence[str]) -> "FiniteFilteredSpace":
        """Single trading period: every outcome is a child of the root."""
        return cls(tuple(outcomes), {ROOT: tuple(outcomes)})

    @classmethod
    def from_branching(cls, steps: Sequence[Sequence[str]]) -> "FiniteFilteredSpace":
        """
        Multi-period tree where step t branches into the labels ``steps[t]``.

        Outcomes are the concatenated labels, e.g. steps (("u","d"),("u","d"))
        give outcomes uu, ud, du, dd with intermediate nodes u and d.
        """
        children: Dict[str, Tuple[str, ...]] = {}
        frontier = [""]
        for labels in steps:
            next_frontier = []
            for prefix in frontier:
                kids = tuple(prefix + label for label in labels)
                children[prefix or ROOT] = kids
                next_frontier.extend(kids)
            frontier = next_frontier
        return cls(tuple(frontier), children)

    def index(self, outcome: str) -> int:
        try:
            return self.outcomes.index(outcome)
        except ValueError:
            raise SpaceMismatch(f"unknown outcome {outcome!r}") from None

    @property
    def size(self) -> int:
        return len(self.outcomes)

    def is_terminal(self, node: str) -> bool:
        return node not in self.children

    @property
    def non_terminal_nodes(self) -> Tuple[str, ...]:
        """Trading nodes in breadth-first order (the order strategies use)."""
        return tuple(node for node in self.nodes if node in self.children)

    def nodes_at(self, t: int) -> Tuple[str, ...]:
        return tuple(node for node in self.nodes if self.depth[node] == t)

    def leaves_below(self, node: str) -> Tuple[int, ...]:
        """Outcome indices of the leaves below ``node``."""
        if node not in self._leaves:
            raise ModelValidationError(f"node {node!r} is not in the tree")
        return self._leaves[node]

    def path(self, outcome: str) -> Tuple[str, ...]:
        """Nodes from the root down to ``outcome``."""
        return self._paths[outcome]

    def same_as(self, other: "FiniteFilteredSpace") -> bool:
        return self is other or (
            self.outcomes == other.outcomes and dict(self.children) == dict(other.children)
        )

    def vector(self, values: OutcomeValues) -> np.ndarray:
        """Align an outcome map or a sequence with the outcome order."""
        if isinstance(values, Mapping):
            missing = [label for label in self.outcomes if label not in values]
            extra = [label for label in values if label not in self.outcomes]
            if missing or extra:
                raise SpaceMismatch(f"outcome map mismatch (missing={missing}, unknown={extra})")
            return np.array([float(values[label]) for label in self.outcomes])
        array = np.asarray(values, dtype=float)
        if array.shape != (self.size,):
            raise SpaceMismatch(f"expected {self.size} outcome values, got shape {array.shape}")
        return array


def _check_same_space(first: "FiniteFilteredSpace", second: "FiniteFilteredSpace") -> None:
    if not first.same_as(second):
        raise SpaceMismatch("objects are defined on different spaces")


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability weights on the outcomes of a space."""

    space: FiniteFilteredSpace
    weights: np.ndarray

    def __post_init__(self):
        weights = self.space.vector(self.weights)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidMeasure("measure weights must be finite and nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > settings.MEASURE_TOLERANCE:
            raise InvalidMeasure(f"measure weights sum to {total!r}, not 1")
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def uniform(cls, space: FiniteFilteredSpace) -> "Measure":
        return cls(space, np.full(space.size, 1.0 / space.size))

    @property
    def is_equivalent(self) -> bool:
        """True when every atom carries positive mass."""
        return bool(np.all(self.weights > 0))

    def require_equivalent(self) -> None:
        if not self.is_equivalent:
            zero = [self.space.outcomes[i] for i in np.flatnonzero(self.weights <= 0)]
            raise EquivalenceViolation(f"measure has zero atoms: {zero}")

    def __getitem__(self, outcome: str) -> float:
        return float(self.weights[self.space.index(outcome)])

    def as_dict(self) -> Dict[str, float]:
        return {label: float(w) for label, w in zip(self.space.outcomes, self.weights)}

    def expect(self, values: OutcomeValues) -> float:
        """
        Expectation with extended-real accumulation.

        Atoms of zero mass are ignored; a -inf (+inf) value on a charged atom
        makes the expectation -inf (+inf).
        """
        array = self.space.vector(values)
        charged = self.weights > 0
        hit = array[charged]
        if np.any(np.isneginf(hit)):
            return -np.inf
        if np.any(np.isposinf(hit)):
            return np.inf
        return float(np.dot(self.weights[charged], hit))


@dataclass(frozen=True, eq=False)
class Density:
    """Radon-Nikodym derivative dQ/dP of two measures, stored per atom."""

    base: Measure
    values: np.ndarray

    def __post_init__(self):
        values = self.base.space.vector(self.values)
        if np.any(values < 0):
            raise InvalidMeasure("density values must be nonnegative")
        object.__setattr__(self, "values", _frozen(values))

    def as_dict(self) -> Dict[str, float]:
        return {label: float(v) for label, v in zip(self.base.space.outcomes, self.values)}

    def measure(self) -> Measure:
        """The measure Q with dQ/dP equal to this density."""
        return Measure(self.base.space, self.base.weights * self.values)


def density(numerator: Measure, base: Measure) -> Density:
    """
    Per-atom ratio dQ/dP.

    Args:
        numerator: The measure Q
        base: The reference measure P, required to be equivalent

    Returns:
        Density with values Q[w] / P[w]
    """
    _check_same_space(numerator.space, base.space)
    base.require_equivalent()
    return Density(base, numerator.weights / base.weights)


def tv_distance(P: Measure, Q: Measure) -> float:
    """Total variation distance: half the L1 distance of the weight vectors."""
    if P.space.outcomes != Q.space.outcomes:
        raise SpaceMismatch("total variation needs measures on the same outcomes")
    return 0.5 * float(np.abs(P.weights - Q.weights).sum())


def conditional_expectation(
    X: OutcomeValues,
    node: str,
    P: Measure,
    space: Optional[FiniteFilteredSpace] = None,
) -> float:
    """
    P-weighted average of X over the leaves below ``node``.

    Args:
        X: Outcome values
        node: A node of the tree
        P: Measure on the space
        space: Tree to use (default: the measure's own space)

    Returns:
        E_P[X | node]
    """
    space = space or P.space
    _check_same_space(space, P.space)
    values = space.vector(X)
    leaves = list(space.leaves_below(node))
    mass = P.weights[leaves].sum()
    if mass <= 0:
        raise DegenerateConditioning(f"node {node!r} has zero probability")
    return float(np.dot(P.weights[leaves], values[leaves]) / mass)


def mixture(P: Measure, P0: Measure, weight: float) -> Measure:
    """The measure (1 - weight) P + weight P0."""
    _check_same_space(P.space, P0.space)
    if not 0.0 <= weight <= 1.0:
        raise ModelValidationError(f"mixture weight must lie in [0, 1], got {weight}")
    weights = (1.0 - weight) * P.weights + weight * P0.weights
    # renormalize only the rounding error of the convex combination
    return Measure(P.space, weights / weights.sum())


def product_space(*factors: Sequence[str], separator: str = "") -> FiniteFilteredSpace:
    """One-period space whose outcomes are all label combinations of the factors."""
    outcomes = [separator.join(combo) for combo in product(*factors)]
    return FiniteFilteredSpace.one_period(outcomes)
