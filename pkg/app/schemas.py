"""Pydantic schemas for model files and command reports."""
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

BASE_MEASURE = "base"


class SpaceSpec(BaseModel):
    """Outcome labels plus either explicit tree edges or per-step branching labels."""
    outcomes: Optional[List[str]] = None
    edges: Optional[List[Tuple[str, str]]] = None
    branching: Optional[List[List[str]]] = None
    root: str = "root"

    @model_validator(mode="after")
    def check_shape(self) -> "SpaceSpec":
        if self.edges is not None and self.branching is not None:
            raise ValueError("space takes either edges or branching, not both")
        if self.branching is None and not self.outcomes:
            raise ValueError("space needs outcomes unless it is given by branching")
        return self


class UtilitySpec(BaseModel):
    """Utility family with optional per-outcome scale a and shift b."""
    family: Literal["log", "power"]
    p: Optional[float] = None
    a: Optional[Dict[str, float]] = None
    b: Optional[Dict[str, float]] = None

    @model_validator(mode="after")
    def check_exponent(self) -> "UtilitySpec":
        if self.family == "power" and self.p is None:
            raise ValueError("power utility needs an exponent p")
        return self


class WeakInfoSpec(BaseModel):
    """Random element labels, its target law and an optional starting law for perturbations."""
    Y: Dict[str, str]
    nu: Dict[str, float]
    nu_start: Optional[Dict[str, float]] = None
    x: float = Field(default=1.0, gt=0)


class ScenarioSpec(BaseModel):
    """One (x, utility, measure) scenario; missing overrides fall back to the model defaults."""
    x: float = Field(gt=0)
    utility: Optional[Union[str, UtilitySpec]] = None
    measure: Optional[Union[str, Dict[str, float]]] = None
    label: Optional[str] = None


class StabilitySpec(BaseModel):
    """Default perturbation sweep of the stability experiments."""
    perturbation: str
    n_min: int = Field(default=2, ge=1)
    n_max: int = Field(default=10000, ge=1)
    count: int = Field(default=13, ge=2)
    x: float = Field(default=1.0, gt=0)
    y: float = Field(default=1.0, gt=0)
    claim: Optional[str] = None

    @model_validator(mode="after")
    def check_range(self) -> "StabilitySpec":
        if self.n_max < self.n_min:
            raise ValueError("n_max must not be below n_min")
        return self


class ModelFile(BaseModel):
    """A market model file."""
    kind: Literal["market"] = "market"
    name: str = ""
    description: Optional[str] = None
    space: SpaceSpec
    base_measure: Dict[str, float]
    measures: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    assets: Dict[str, Dict[str, float]]
    utility: UtilitySpec
    claims: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    weak_info: Optional[WeakInfoSpec] = None
    scenarios: Dict[str, List[ScenarioSpec]] = Field(default_factory=dict)
    stability: Optional[StabilitySpec] = None

    @field_validator("assets")
    @classmethod
    def check_assets(cls, value: Dict[str, Dict[str, float]]) -> Dict[str, Dict[str, float]]:
        if not value:
            raise ValueError("a model needs at least one risky asset")
        return value

    @model_validator(mode="after")
    def check_references(self) -> "ModelFile":
        if BASE_MEASURE in self.measures:
            raise ValueError(f"measure name {BASE_MEASURE!r} is reserved for the base measure")
        known = set(self.measures) | {BASE_MEASURE}
        for set_name, scenarios in self.scenarios.items():
            if not scenarios:
                raise ValueError(f"scenario set {set_name!r} is empty")
            for scenario in scenarios:
                if isinstance(scenario.measure, str) and scenario.measure not in known:
                    raise ValueError(f"scenario set {set_name!r} refers to unknown measure {scenario.measure!r}")
        if self.stability is not None:
            if self.stability.perturbation not in known:
                raise ValueError(f"stability refers to unknown measure {self.stability.perturbation!r}")
            if self.stability.claim is not None and self.stability.claim not in self.claims:
                raise ValueError(f"stability refers to unknown claim {self.stability.claim!r}")
        return self


class CounterexampleFile(BaseModel):
    """Truncated quadrature set-up of one counterexample."""
    kind: Literal["counterexample"]
    name: str = ""
    which: Literal["assumption_asUI1", "assumption_asUI"]
    n: int = Field(ge=1)
    terms: int = Field(default=8, ge=1)
    cutoffs: List[float] = Field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0, 10.0])
    panels_per_unit: int = Field(default=4, ge=1)
    order: int = Field(default=32, ge=2)
    p: float = 0.75
    sharpe: float = 0.5

    @field_validator("cutoffs")
    @classmethod
    def check_cutoffs(cls, value: List[float]) -> List[float]:
        if len(value) < 2:
            raise ValueError("a cutoff sweep needs at least two values")
        if any(c <= 0 for c in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("cutoffs must be positive and strictly increasing")
        return value


class PriceResponse(BaseModel):
    """Schema for an indifference price report."""
    claim: str
    price: float
    x: float
    utility: str
    y_star: float
    pricing_density: Dict[str, float]
    pricing_measure: Dict[str, float]
    martingale_certificate: float
    definitional_check: Optional[float] = None
    definitional_passed: Optional[bool] = None
    definitional_slack: Dict[str, float] = Field(default_factory=dict)
    arbitrage_bounds: Optional[Tuple[float, float]] = None

    model_config = {"from_attributes": True}


class DualResponse(BaseModel):
    """Schema for the dual part of a solve report."""
    y: float
    value: float
    q_hat: Dict[str, float]
    boundary_flag: bool
    iterations: int
    kkt_residual: float
    feasibility_residual: float

    model_config = {"from_attributes": True}


class SolveResponse(BaseModel):
    """Schema for a primal/dual solve report."""
    model: str
    utility: str
    x: float
    value: float
    y_star: float
    terminal_wealth: Dict[str, float]
    strategy: Optional[Dict[str, List[float]]] = None
    budget_residual: float
    complete: bool
    polytope_dimension: int
    dual: DualResponse
    dual_at_y: Optional[DualResponse] = None
    constraints: Optional[Dict[str, List[List[float]]]] = None


class InvarianceResponse(BaseModel):
    """Schema for an invariance report over one scenario set."""
    model: str
    scenario_set: str
    scenarios: List[str]
    tolerance: float
    claims: List[Dict[str, Any]]
    invariant_basis: List[List[float]]
    replicable_dimension: int
    inconclusive: bool
    random_claims: Optional[Dict[str, Any]] = None
    passed: bool


class WeakInfoResponse(BaseModel):
    """Schema for the value of weak information."""
    model: str
    utility: str
    x: float
    law: Dict[str, float]
    prior_law: Dict[str, float]
    minimal_measure: Dict[str, float]
    value_prior: Optional[float] = None
    value_informed: Optional[float] = None
    certainty_equivalent: Optional[float] = None
    complete: bool
    price_impact: List[Dict[str, Any]] = Field(default_factory=list)


class StabilityResponse(BaseModel):
    """Schema for a stability experiment."""
    model: str
    experiment: str
    tolerance: float
    rows: List[Dict[str, Optional[Union[int, float]]]]
    verdicts: Dict[str, bool]
    monotone_tail: Dict[str, bool] = Field(default_factory=dict)
    diagnostics: Dict[str, float] = Field(default_factory=dict)
    failures: List[Dict[str, Any]] = Field(default_factory=list)
    passed: bool


class CounterexampleResponse(BaseModel):
    """Schema for a truncation demo."""
    which: str
    n: int
    terms: Optional[int] = None
    cutoffs: List[float]
    log_values: List[float]
    values: List[float]
    increasing: bool
    ratio: float
    expect_divergence: bool
    diverges: bool
    verdict: bool
    parameters: Dict[str, float] = Field(default_factory=dict)

    model_config = {"from_attributes": True}


class ValidateResponse(BaseModel):
    """Schema for a validation report."""
    path: str
    kind: str
    valid: bool
    outcomes: Optional[int] = None
    assets: Optional[int] = None
    complete: Optional[bool] = None
    polytope_dimension: Optional[int] = None
    error: Optional[str] = None
