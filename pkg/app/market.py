"""Price processes on event trees, attainable wealth and the martingale polytope."""
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from app.config import settings
from app.errors import InvalidNumeraire, ModelValidationError, NoArbitrageViolation, SpaceMismatch
from app.prob_space import FiniteFilteredSpace, OutcomeValues

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """
    Risky assets priced at every node of a tree, plus a riskless asset
    whose price is identically 1.

    Attributes:
        space: The event tree
        asset_names: Names of the d risky assets
        prices: Array of shape (number of nodes, d) ordered like ``space.nodes``
    """

    space: FiniteFilteredSpace
    asset_names: Tuple[str, ...]
    prices: np.ndarray
    node_index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        prices = np.array(self.prices, dtype=float)
        names = tuple(self.asset_names)
        if prices.ndim != 2 or prices.shape != (len(self.space.nodes), len(names)):
            raise ModelValidationError(
                f"prices must have shape ({len(self.space.nodes)}, {len(names)}), got {prices.shape}"
            )
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ModelValidationError("asset prices must be finite and strictly positive")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "asset_names", names)
        object.__setattr__(self, "node_index", {node: i for i, node in enumerate(self.space.nodes)})

    @classmethod
    def from_node_prices(cls, space: FiniteFilteredSpace, assets: Mapping[str, Mapping[str, float]]) -> "MarketModel":
        """Build a model from {asset name: {node: price}} maps covering every node."""
        names = tuple(assets)
        prices = np.empty((len(space.nodes), len(names)))
        for j, name in enumerate(names):
            node_prices = assets[name]
            missing = [node for node in space.nodes if node not in node_prices]
            unknown = [node for node in node_prices if node not in space.depth]
            if missing or unknown:
                raise ModelValidationError(
                    f"asset {name!r}: missing nodes {missing}, unknown nodes {unknown}"
                )
            prices[:, j] = [float(node_prices[node]) for node in space.nodes]
        return cls(space, names, prices)

    @classmethod
    def one_period(cls, outcomes: Sequence[str], s0: float, terminal: Sequence[float], name: str = "S1") -> "MarketModel":
        """Single risky asset over one period."""
        space = FiniteFilteredSpace.one_period(outcomes)
        prices = np.concatenate([[s0], np.asarray(terminal, dtype=float)]).reshape(-1, 1)
        return cls(space, (name,), prices)

    @property
    def n_assets(self) -> int:
        return len(self.asset_names)

    def price(self, node: str) -> np.ndarray:
        return self.prices[self.node_index[node]]

    def terminal_prices(self, asset: int = 0) -> np.ndarray:
        """Terminal price of one asset per outcome."""
        return np.array([self.prices[self.node_index[w], asset] for w in self.space.outcomes])

    def node_prices(self, asset: int = 0) -> Dict[str, float]:
        return {node: float(self.prices[i, asset]) for i, node in enumerate(self.space.nodes)}


@dataclass(frozen=True, eq=False)
class Strategy:
    """Holdings of the risky assets chosen at each trading node."""

    model: MarketModel
    holdings: np.ndarray

    def __post_init__(self):
        expected = (len(self.model.space.non_terminal_nodes), self.model.n_assets)
        holdings = np.array(self.holdings, dtype=float).reshape(expected)
        holdings.setflags(write=False)
        object.__setattr__(self, "holdings", holdings)

    @classmethod
    def zeros(cls, model: MarketModel) -> "Strategy":
        return cls(model, np.zeros((len(model.space.non_terminal_nodes), model.n_assets)))

    @classmethod
    def constant(cls, model: MarketModel, units: Sequence[float]) -> "Strategy":
        """Buy-and-hold of fixed units at every trading node."""
        rows = len(model.space.non_terminal_nodes)
        return cls(model, np.tile(np.asarray(units, dtype=float), (rows, 1)))

    def as_vector(self) -> np.ndarray:
        return self.holdings.ravel()

    def holding(self, node: str) -> np.ndarray:
        return self.holdings[self.model.space.non_terminal_nodes.index(node)]


@dataclass(frozen=True, eq=False)
class ClaimVector:
    """Terminal payoff per outcome."""

    space: FiniteFilteredSpace
    payoff: np.ndarray
    name: str = "claim"

    def __post_init__(self):
        payoff = self.space.vector(self.payoff)
        if not np.all(np.isfinite(payoff)):
            raise ModelValidationError(f"claim {self.name!r} has non-finite payoffs")
        payoff.setflags(write=False)
        object.__setattr__(self, "payoff", payoff)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.payoff)))

    def as_dict(self) -> Dict[str, float]:
        return {label: float(v) for label, v in zip(self.space.outcomes, self.payoff)}


@dataclass(frozen=True, eq=False)
class ReplicationCertificate:
    """Initial cost and strategy whose terminal wealth matches a claim."""

    cost: float
    strategy: Strategy
    residual: float


@dataclass(frozen=True, eq=False)
class MartingaleConstraints:
    """
    The system {A q = b, q >= 0} of martingale measures.

    The first row of A is the total-mass row; the remaining rows are the
    transposed gains matrix (one per trading node and asset).
    """

    A: np.ndarray
    b: np.ndarray
    interior: np.ndarray
    min_weight: float
    null_basis: np.ndarray

    @property
    def dimension(self) -> int:
        """Dimension of the polytope (0 for a complete model)."""
        return int(self.null_basis.shape[1])

    def residual(self, q: np.ndarray) -> float:
        return float(np.max(np.abs(self.A @ q - self.b)))


def gains_matrix(model: MarketModel) -> np.ndarray:
    """
    Linear map from a flattened strategy to terminal trading gains.

    Entry (w, k*d + j) is S_j(c) - S_j(k) when node k lies on the path of
    outcome w and c is the next node on that path, otherwise 0.
    """
    space = model.space
    trading = space.non_terminal_nodes
    d = model.n_assets
    G = np.zeros((space.size, len(trading) * d))
    for k, node in enumerate(trading):
        here = model.price(node)
        for w in space.leaves_below(node):
            path = space.path(space.outcomes[w])
            child = path[space.depth[node] + 1]
            G[w, k * d:(k + 1) * d] = model.price(child) - here
    return G


def wealth_process(x: float, H: Strategy, model: MarketModel) -> Dict[str, float]:
    """
    Self-financing wealth at every node.

    Args:
        x: Initial wealth
        H: Predictable holdings
        model: Market model

    Returns:
        Mapping node -> wealth in breadth-first node order
    """
    space = model.space
    wealth = {space.root: float(x)}
    for node in space.nodes:
        if space.is_terminal(node):
            continue
        units = H.holding(node)
        here = model.price(node)
        for child in space.children[node]:
            wealth[child] = wealth[node] + float(np.dot(units, model.price(child) - here))
    return {node: wealth[node] for node in space.nodes}


def terminal_wealth(x: float, H: Strategy, model: MarketModel) -> np.ndarray:
    """Terminal wealth x + G theta per outcome."""
    return x + gains_matrix(model) @ H.as_vector()


def is_replicable(f: ClaimVector, model: MarketModel) -> Optional[ReplicationCertificate]:
    """
    Check whether f lies in the attainable affine span {x + (H.S)_T}.

    Solves the least-norm problem for (x, theta) and accepts when the
    residual is strictly below REPLICATION_TOLERANCE * (1 + |f|_inf).

    Returns:
        ReplicationCertificate, or None when f is not replicable
    """
    if not f.space.same_as(model.space):
        raise SpaceMismatch("claim and model live on different spaces")
    G = gains_matrix(model)
    system = np.hstack([np.ones((model.space.size, 1)), G])
    solution, *_ = np.linalg.lstsq(system, f.payoff, rcond=None)
    residual = float(np.max(np.abs(system @ solution - f.payoff)))
    threshold = settings.REPLICATION_TOLERANCE * (1.0 + f.sup_norm)
    if residual < threshold:
        return ReplicationCertificate(
            cost=float(solution[0]),
            strategy=Strategy(model, solution[1:]),
            residual=residual,
        )
    return None


def martingale_measure_constraints(model: MarketModel) -> MartingaleConstraints:
    """
    Build the martingale polytope and certify a strictly positive point.

    Solves max t s.t. A q = b, q >= t, t <= 1 and raises when the optimal
    t is not positive.

    Raises:
        NoArbitrageViolation: no (strictly positive) martingale measure exists
    """
    n = model.space.size
    G = gains_matrix(model)
    A = np.vstack([np.ones((1, n)), G.T])
    b = np.zeros(A.shape[0])
    b[0] = 1.0

    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    result = linprog(
        cost,
        A_ub=A_ub,
        b_ub=np.zeros(n),
        A_eq=A_eq,
        b_eq=b,
        bounds=[(0, None)] * n + [(None, 1.0)],
        method="highs",
    )
    if result.status != 0:
        raise NoArbitrageViolation(f"no martingale measure exists ({result.message})")
    slack = float(result.x[-1])
    if slack <= settings.FEASIBILITY_TOLERANCE:
        raise NoArbitrageViolation("martingale measures exist but none is strictly positive")

    q0 = result.x[:n]
    # pull the LP point exactly onto the affine set
    correction, *_ = np.linalg.lstsq(A, A @ q0 - b, rcond=None)
    q0 = q0 - correction
    basis = null_space(A)
    logger.debug("martingale polytope: %d outcomes, dimension %d, min weight %.3g", n, basis.shape[1], slack)
    return MartingaleConstraints(A=A, b=b, interior=q0, min_weight=float(q0.min()), null_basis=basis)


def is_complete(model: MarketModel, constraints: Optional[MartingaleConstraints] = None) -> bool:
    """True iff the martingale measure is unique (rank test)."""
    constraints = constraints or martingale_measure_constraints(model)
    return constraints.dimension == 0


def martingale_residual(model: MarketModel, q: np.ndarray) -> float:
    """Largest |E_q[S(next) | node] - S(node)| over trading nodes and assets."""
    space = model.space
    q = np.asarray(q, dtype=float)
    worst = 0.0
    for node in space.non_terminal_nodes:
        leaves = list(space.leaves_below(node))
        mass = q[leaves].sum()
        if mass <= 0:
            continue
        expected = np.zeros(model.n_assets)
        for child in space.children[node]:
            expected += q[list(space.leaves_below(child))].sum() * model.price(child)
        worst = max(worst, float(np.max(np.abs(expected / mass - model.price(node)))))
    return worst


def extreme_points(constraints: MartingaleConstraints, tol: float = 1e-12) -> np.ndarray:
    """
    Vertices of {A q = b, q >= 0} by basis enumeration.

    Intended for small trees; the number of candidate bases grows
    combinatorially with the number of outcomes.
    """
    A, b = constraints.A, constraints.b
    n = A.shape[1]
    rank = np.linalg.matrix_rank(A)
    vertices: List[np.ndarray] = []
    for support in combinations(range(n), rank):
        columns = A[:, support]
        if np.linalg.matrix_rank(columns) < rank:
            continue
        coef, *_ = np.linalg.lstsq(columns, b, rcond=None)
        if np.max(np.abs(columns @ coef - b)) > 1e-10 or np.any(coef < -tol):
            continue
        point = np.zeros(n)
        point[list(support)] = np.clip(coef, 0.0, None)
        if not any(np.allclose(point, v, atol=1e-12) for v in vertices):
            vertices.append(point)
    return np.array(vertices)


def arbitrage_bounds(f: ClaimVector, model: MarketModel) -> Tuple[float, float]:
    """Infimum and supremum of E_q[f] over all martingale measures."""
    constraints = martingale_measure_constraints(model)
    bounds = []
    for sign in (1.0, -1.0):
        result = linprog(
            sign * f.payoff,
            A_eq=constraints.A,
            b_eq=constraints.b,
            bounds=[(0, None)] * model.space.size,
            method="highs",
        )
        if result.status != 0:
            raise NoArbitrageViolation(f"bound computation failed ({result.message})")
        bounds.append(sign * float(result.fun))
    return bounds[0], bounds[1]


def asset_position(model: MarketModel, asset: Union[int, str, None]) -> Optional[int]:
    if asset is None or asset == "riskless":
        return None
    if isinstance(asset, str):
        if asset not in model.asset_names:
            raise InvalidNumeraire(f"unknown asset {asset!r}")
        return model.asset_names.index(asset)
    if not 0 <= asset < model.n_assets:
        raise InvalidNumeraire(f"asset index {asset} out of range")
    return int(asset)


def change_numeraire(
    model: MarketModel,
    asset: Union[int, str, None],
    f: ClaimVector,
) -> Tuple[MarketModel, ClaimVector]:
    """
    Re-express prices and the claim in units of a risky asset.

    Every price is divided by the numeraire's price at the same node; the
    numeraire's own column becomes the former riskless asset, priced at
    1/S. The claim is divided by the numeraire's terminal price.

    Args:
        model: Market model
        asset: Index or name of the numeraire; None or "riskless" keeps the model
        f: Claim to convert

    Returns:
        (model in numeraire units, converted claim)
    """
    position = asset_position(model, asset)
    if position is None:
        return model, f
    numeraire = model.prices[:, position]
    if np.any(numeraire <= 0):
        raise InvalidNumeraire("numeraire must be strictly positive at every node")
    prices = model.prices / numeraire[:, None]
    prices[:, position] = 1.0 / numeraire
    converted = ClaimVector(f.space, f.payoff / model.terminal_prices(position), f.name)
    return MarketModel(model.space, model.asset_names, prices), converted


def restore_numeraire(
    model: MarketModel,
    asset: Union[int, str, None],
    f: ClaimVector,
) -> Tuple[MarketModel, ClaimVector]:
    """Inverse of change_numeraire for the same asset position."""
    position = asset_position(model, asset)
    if position is None:
        return model, f
    numeraire = 1.0 / model.prices[:, position]
    prices = model.prices * numeraire[:, None]
    prices[:, position] = numeraire
    restored = MarketModel(model.space, model.asset_names, prices)
    payoff = f.payoff * restored.terminal_prices(position)
    return restored, ClaimVector(f.space, payoff, f.name)


def random_replicable_claims(
    model: MarketModel,
    count: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> List[Tuple[ClaimVector, float]]:
    """
    Claims x + G theta with random cost x and holdings theta.

    Returns:
        List of (claim, replication cost)
    """
    rows = len(model.space.non_terminal_nodes)
    claims = []
    for k in range(count):
        cost = float(rng.uniform(0.5, 2.0))
        holdings = rng.normal(scale=scale, size=(rows, model.n_assets))
        payoff = terminal_wealth(cost, Strategy(model, holdings), model)
        claims.append((ClaimVector(model.space, payoff, f"replicable_{k}"), cost))
    return claims
