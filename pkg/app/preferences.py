"""Stochastic utility fields, their convex conjugates and inverse marginals."""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from app.config import settings
from app.errors import DomainError, UtilityValidationError
from app.prob_space import FiniteFilteredSpace, OutcomeValues

logger = logging.getLogger(__name__)

LOG = "log"
POWER = "power"
FAMILIES = (LOG, POWER)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _power_exponent(p: np.ndarray) -> np.ndarray:
    """Conjugate exponent q = p / (1 - p)."""
    return p / (1.0 - p)


@dataclass(frozen=True, eq=False)
class UtilityField:
    """
    Per-outcome utility a(w) * U0(x) + b(w) with U0 = log x or x^p / p.

    Attributes:
        space: Outcome space
        family: Family name per outcome ("log" or "power")
        p: Power exponent per outcome (NaN for log outcomes)
        a: Positive scale per outcome
        b: Finite shift per outcome
    """

    space: FiniteFilteredSpace
    family: tuple
    p: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n = self.space.size
        family = tuple(self.family) if not isinstance(self.family, str) else (self.family,) * n
        if len(family) != n:
            raise UtilityValidationError(f"expected {n} families, got {len(family)}")
        unknown = sorted(set(family) - set(FAMILIES))
        if unknown:
            raise UtilityValidationError(f"unsupported utility family: {unknown}")
        p = np.broadcast_to(np.asarray(self.p, dtype=float), (n,)).copy()
        a = np.broadcast_to(np.asarray(self.a, dtype=float), (n,)).copy()
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (n,)).copy()
        is_log = np.array([fam == LOG for fam in family])
        p[is_log] = np.nan
        power_p = p[~is_log]
        if np.any(~np.isfinite(power_p)) or np.any(power_p >= 1) or np.any(power_p == 0):
            raise UtilityValidationError("power utilities need p < 1 and p != 0")
        if np.any(~np.isfinite(a)) or np.any(a <= 0):
            raise UtilityValidationError("utility scales a must be positive")
        if np.any(~np.isfinite(b)):
            raise UtilityValidationError("utility shifts b must be finite")
        for array in (p, a, b):
            array.setflags(write=False)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_is_log", is_log)
        validate_inada(self)

    @classmethod
    def log(cls, space: FiniteFilteredSpace) -> "UtilityField":
        return cls(space, LOG, np.nan, 1.0, 0.0)

    @classmethod
    def power(cls, space: FiniteFilteredSpace, p: float) -> "UtilityField":
        return cls(space, POWER, p, 1.0, 0.0)

    @classmethod
    def from_spec(
        cls,
        space: FiniteFilteredSpace,
        family: str,
        p: Optional[float] = None,
        a: Optional[OutcomeValues] = None,
        b: Optional[OutcomeValues] = None,
    ) -> "UtilityField":
        """Build from a family name plus optional per-outcome scale and shift maps."""
        if family == POWER and p is None:
            raise UtilityValidationError("power utility needs an exponent p")
        scale = space.vector(a) if a is not None else 1.0
        shift = space.vector(b) if b is not None else 0.0
        return cls(space, family, np.nan if p is None else p, scale, shift)

    @property
    def name(self) -> str:
        if len(set(self.family)) == 1 and self.is_deterministic:
            if self.family[0] == LOG:
                return "log"
            return f"power({self.p[0]:g})"
        return "field"

    @property
    def is_deterministic(self) -> bool:
        """True when all outcomes share family, exponent, scale and shift."""
        same_p = np.array_equal(self.p, np.full_like(self.p, self.p[0]), equal_nan=True)
        return (
            len(set(self.family)) == 1
            and same_p
            and bool(np.all(self.a == self.a[0]))
            and bool(np.all(self.b == self.b[0]))
        )

    def with_scaling(self, a: ArrayLike, b: ArrayLike = 0.0) -> "UtilityField":
        """Compose with an outcome-wise affine map: a * U + b."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (self.space.size,))
        b = np.broadcast_to(np.asarray(b, dtype=float), (self.space.size,))
        return UtilityField(self.space, self.family, self.p, self.a * a, self.b * a + b)

    def rescaled(self, factor: ArrayLike) -> "UtilityField":
        """
        The field x -> U(w, s(w) x) for positive factors s.

        Power outcomes pick up a * s^p, log outcomes b + a * log s.
        """
        s = np.broadcast_to(np.asarray(factor, dtype=float), (self.space.size,))
        if np.any(s <= 0):
            raise DomainError("rescaling factors must be positive")
        a = self.a.copy()
        b = self.b.copy()
        power = ~self._is_log
        a[power] = a[power] * s[power] ** self.p[power]
        b[self._is_log] = b[self._is_log] + a[self._is_log] * np.log(s[self._is_log])
        return UtilityField(self.space, self.family, self.p, a, b)

    def _broadcast(self, values: ArrayLike) -> np.ndarray:
        return np.broadcast_to(np.asarray(values, dtype=float), (self.space.size,)).astype(float)

    def value(self, x: ArrayLike) -> np.ndarray:
        """U(w, x_w) per outcome; -inf where the limit at 0 is -inf."""
        x = self._broadcast(x)
        positive = x > 0
        safe = np.where(positive, x, 1.0)
        out = np.empty_like(x)
        out[self._is_log] = np.log(safe[self._is_log])
        power = ~self._is_log
        out[power] = np.power(safe[power], self.p[power]) / self.p[power]
        # limit at 0: 0 for p > 0, -inf for log and p < 0
        at_zero = np.where(power & (np.nan_to_num(self.p) > 0), 0.0, -np.inf)
        out = np.where(positive, out, np.where(x == 0, at_zero, -np.inf))
        return self.a * out + self.b

    def marginal(self, x: ArrayLike) -> np.ndarray:
        """U'(w, x_w) for x > 0."""
        x = self._broadcast(x)
        out = np.empty_like(x)
        out[self._is_log] = 1.0 / x[self._is_log]
        power = ~self._is_log
        out[power] = np.power(x[power], self.p[power] - 1.0)
        return self.a * out

    def curvature(self, x: ArrayLike) -> np.ndarray:
        """U''(w, x_w) for x > 0."""
        x = self._broadcast(x)
        out = np.empty_like(x)
        out[self._is_log] = -1.0 / x[self._is_log] ** 2
        power = ~self._is_log
        p = self.p[power]
        out[power] = (p - 1.0) * np.power(x[power], p - 2.0)
        return self.a * out

    def inverse_marginal(self, y: ArrayLike) -> np.ndarray:
        """I(w, y) = (U')^{-1}(y) per outcome, y > 0."""
        y = self._broadcast(y)
        if np.any(y <= 0):
            raise DomainError("inverse marginal needs y > 0")
        s = y / self.a
        out = np.empty_like(s)
        out[self._is_log] = 1.0 / s[self._is_log]
        power = ~self._is_log
        out[power] = np.power(s[power], 1.0 / (self.p[power] - 1.0))
        return out

    def conjugate(self) -> "ConjugateField":
        return ConjugateField(self)


@dataclass(frozen=True, eq=False)
class ConjugateField:
    """
    Convex conjugate V(w, y) = sup_x (U(w, x) - x y), in closed form.

    For a * U0 + b the conjugate is a * V0(y / a) + b, with
    V0(s) = -log s - 1 for log and V0(s) = s^{-q} / q, q = p / (1 - p),
    for power utilities.
    """

    utility: UtilityField

    @property
    def space(self) -> FiniteFilteredSpace:
        return self.utility.space

    def _scaled(self, y: ArrayLike) -> np.ndarray:
        return self.utility._broadcast(y) / self.utility.a

    def value(self, y: ArrayLike) -> np.ndarray:
        """V(w, y) per outcome; +inf at y = 0 where V0 is unbounded."""
        u = self.utility
        s = self._scaled(y)
        out = np.empty_like(s)
        with np.errstate(divide="ignore"):
            out[u._is_log] = -np.log(s[u._is_log]) - 1.0
            power = ~u._is_log
            q = _power_exponent(u.p[power])
            sp = s[power]
            out[power] = np.where(
                sp > 0,
                np.power(np.where(sp > 0, sp, 1.0), -q) / q,
                np.where(q > 0, np.inf, 0.0),
            )
        return u.a * out + u.b

    def derivative(self, y: ArrayLike) -> np.ndarray:
        """V'(w, y) = -I(w, y)."""
        return -self.utility.inverse_marginal(y)

    def second_derivative(self, y: ArrayLike) -> np.ndarray:
        """V''(w, y) > 0."""
        u = self.utility
        s = self._scaled(y)
        out = np.empty_like(s)
        out[u._is_log] = 1.0 / s[u._is_log] ** 2
        power = ~u._is_log
        exponent = 1.0 / (1.0 - u.p[power])
        out[power] = exponent * np.power(s[power], -exponent - 1.0)
        return out / u.a


def conjugate(U: UtilityField) -> ConjugateField:
    """Closed-form convex conjugate of a utility field."""
    return U.conjugate()


def inverse_marginal(U: UtilityField, outcome: str, y: float) -> float:
    """
    I(y) = (U')^{-1}(y) = -V'(y) at a single outcome.

    Raises:
        DomainError: y <= 0
    """
    if y <= 0:
        raise DomainError(f"inverse marginal needs y > 0, got {y}")
    i = U.space.index(outcome)
    return float(U.inverse_marginal(np.full(U.space.size, float(y)))[i])


def gamma_divergence(V: ConjugateField, outcome: str, x: float, y: float) -> float:
    """
    Midpoint convexity gap (V(x) + V(y)) / 2 - V((x + y) / 2) at one outcome.

    Nonnegative by convexity and zero only when x == y.
    """
    if x <= 0 or y <= 0:
        raise DomainError("gamma divergence needs positive arguments")
    i = V.space.index(outcome)
    n = V.space.size

    def at(point: float) -> float:
        return float(V.value(np.full(n, point))[i])

    return 0.5 * (at(x) + at(y)) - at(0.5 * (x + y))


def validate_inada(U: UtilityField, grid: Optional[np.ndarray] = None) -> None:
    """
    Grid certificate of monotonicity, concavity and the Inada limits.

    On a log-spaced grid U' must be positive, finite and strictly
    decreasing, and its log-log slope must be negative at both ends, so the
    power-law tails send U' to infinity at 0 and to 0 at infinity.

    Raises:
        UtilityValidationError: the field fails the certificate
    """
    if grid is None:
        grid = np.geomspace(settings.INADA_GRID_MIN, settings.INADA_GRID_MAX, settings.INADA_GRID_POINTS)
    n = U.space.size
    slopes = np.empty((len(grid), n))
    for row, x in enumerate(grid):
        slopes[row] = U.marginal(np.full(n, x))
    if np.any(~np.isfinite(slopes)) or np.any(slopes <= 0):
        raise UtilityValidationError("marginal utility must be positive and finite on the grid")
    if np.any(np.diff(slopes, axis=0) >= 0):
        raise UtilityValidationError("marginal utility must be strictly decreasing on the grid")
    log_grid = np.log(grid)
    head = (np.log(slopes[1]) - np.log(slopes[0])) / (log_grid[1] - log_grid[0])
    tail = (np.log(slopes[-1]) - np.log(slopes[-2])) / (log_grid[-1] - log_grid[-2])
    if np.any(head >= 0) or np.any(tail >= 0):
        raise UtilityValidationError("marginal utility tails violate the Inada limits")
    logger.debug("utility field passed the Inada grid check on %d points", len(grid))


def parse_utility(space: FiniteFilteredSpace, text: str) -> UtilityField:
    """
    Parse a command-line utility name.

    Accepted forms: "log", "power:<p>", "power(<p>)", "sqrt" (= power 1/2).
    """
    token = text.strip().lower()
    if token == LOG:
        return UtilityField.log(space)
    if token == "sqrt":
        return UtilityField.power(space, 0.5)
    for prefix, suffix in (("power:", ""), ("power(", ")")):
        if token.startswith(prefix) and token.endswith(suffix):
            body = token[len(prefix):len(token) - len(suffix)]
            try:
                exponent = float(body)
            except ValueError:
                raise UtilityValidationError(f"invalid power exponent {body!r}") from None
            return UtilityField.power(space, exponent)
    raise UtilityValidationError(f"unknown utility {text!r}; use log, sqrt or power:<p>")


def describe(U: UtilityField) -> Dict[str, object]:
    """Plain-dict description used in reports."""
    return {
        "name": U.name,
        "family": list(U.family),
        "p": [None if np.isnan(v) else float(v) for v in U.p],
        "a": [float(v) for v in U.a],
        "b": [float(v) for v in U.b],
    }
