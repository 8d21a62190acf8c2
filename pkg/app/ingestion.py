"""Loading model and counterexample files into domain objects."""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import ValidationError

from app.config import settings
from app.errors import ModelValidationError
from app.market import ClaimVector, MarketModel, martingale_measure_constraints
from app.preferences import UtilityField, parse_utility
from app.pricing import Scenario
from app.prob_space import FiniteFilteredSpace, Measure
from app.schemas import BASE_MEASURE, CounterexampleFile, ModelFile, ScenarioSpec, SpaceSpec, UtilitySpec
from app.stability_lab import GaussianGridSpec
from app.weak_info import Law, RandomElement

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class WeakInfoSetup:
    Y: RandomElement
    nu: Law
    nu_start: Optional[Law]
    x: float


@dataclass(eq=False)
class LoadedModel:
    """A validated model file together with its domain objects."""

    path: Path
    spec: ModelFile
    model: MarketModel
    P: Measure
    utility: UtilityField
    measures: Dict[str, Measure]
    claims: Dict[str, ClaimVector]
    scenarios: Dict[str, List[Scenario]] = field(default_factory=dict)
    weak_info: Optional[WeakInfoSetup] = None

    @property
    def name(self) -> str:
        return self.spec.name or self.path.stem

    @property
    def space(self) -> FiniteFilteredSpace:
        return self.model.space

    def measure(self, name: str) -> Measure:
        if name == BASE_MEASURE:
            return self.P
        try:
            return self.measures[name]
        except KeyError:
            raise ModelValidationError(f"unknown measure {name!r}") from None

    def claim(self, name: str) -> ClaimVector:
        try:
            return self.claims[name]
        except KeyError:
            raise ModelValidationError(f"unknown claim {name!r}; known: {sorted(self.claims)}") from None

    def scenario_set(self, name: Optional[str] = None) -> List[Scenario]:
        """Named scenario set; the first set in the file when name is None."""
        if not self.scenarios:
            raise ModelValidationError(f"model {self.name!r} defines no scenario sets")
        if name is None:
            return next(iter(self.scenarios.values()))
        try:
            return self.scenarios[name]
        except KeyError:
            raise ModelValidationError(f"unknown scenario set {name!r}; known: {sorted(self.scenarios)}") from None


def resolve_path(path: PathLike) -> Path:
    """Use the path as given, else look it up under settings.DATA_DIR."""
    path = Path(path)
    if path.exists():
        return path
    candidate = Path(settings.DATA_DIR) / path
    if candidate.exists():
        return candidate
    raise FileNotFoundError(f"Model file not found: {path}")


def read_json(path: PathLike) -> dict:
    path = resolve_path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except json.JSONDecodeError as error:
        raise ModelValidationError(f"{path}: invalid JSON ({error.msg} at line {error.lineno})") from None
    if not isinstance(document, dict):
        raise ModelValidationError(f"{path}: top level must be a JSON object")
    return document


def detect_kind(document: dict) -> str:
    """File kind: "market" unless the document declares "counterexample"."""
    kind = document.get("kind", "market")
    if kind not in ("market", "counterexample"):
        raise ModelValidationError(f"unknown file kind {kind!r}")
    return kind


def _validation_message(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    return f"{location}: {first['msg']}"


def build_space(spec: SpaceSpec) -> FiniteFilteredSpace:
    if spec.branching is not None:
        space = FiniteFilteredSpace.from_branching(spec.branching)
        if spec.outcomes and tuple(spec.outcomes) != space.outcomes:
            raise ModelValidationError(f"outcomes {spec.outcomes} do not match the branching {list(space.outcomes)}")
        return space
    if spec.edges is None:
        return FiniteFilteredSpace.one_period(spec.outcomes)
    return FiniteFilteredSpace.from_edges(spec.outcomes, spec.edges, spec.root)


def build_utility(space: FiniteFilteredSpace, spec: Union[str, UtilitySpec]) -> UtilityField:
    if isinstance(spec, str):
        return parse_utility(space, spec)
    return UtilityField.from_spec(space, spec.family, spec.p, spec.a, spec.b)


def _build_scenario(loaded: LoadedModel, spec: ScenarioSpec) -> Scenario:
    utility = loaded.utility if spec.utility is None else build_utility(loaded.space, spec.utility)
    if spec.measure is None:
        measure, measure_name = loaded.P, BASE_MEASURE
    elif isinstance(spec.measure, str):
        measure, measure_name = loaded.measure(spec.measure), spec.measure
    else:
        measure, measure_name = Measure(loaded.space, spec.measure), "inline"
    label = spec.label or f"x={spec.x:g}/{utility.name}/{measure_name}"
    return Scenario(spec.x, utility, measure, label)


def build_model(spec: ModelFile, path: Path) -> LoadedModel:
    """
    Turn a schema-valid file into domain objects, checking everything the
    schema cannot: tree shape, measure weights, utility certificate, claim
    outcomes and the existence of an equivalent martingale measure.
    """
    space = build_space(spec.space)
    model = MarketModel.from_node_prices(space, spec.assets)
    P = Measure(space, spec.base_measure)
    P.require_equivalent()
    measures = {name: Measure(space, weights) for name, weights in spec.measures.items()}
    utility = build_utility(space, spec.utility)
    claims = {name: ClaimVector(space, payoff, name) for name, payoff in spec.claims.items()}
    martingale_measure_constraints(model)

    loaded = LoadedModel(path, spec, model, P, utility, measures, claims)
    loaded.scenarios = {
        name: [_build_scenario(loaded, scenario) for scenario in scenarios]
        for name, scenarios in spec.scenarios.items()
    }
    if spec.weak_info is not None:
        Y = RandomElement(space, spec.weak_info.Y)
        nu = Law.from_mapping(spec.weak_info.nu)
        nu.aligned(Y.label_set)
        nu_start = Law.from_mapping(spec.weak_info.nu_start) if spec.weak_info.nu_start else None
        loaded.weak_info = WeakInfoSetup(Y, nu, nu_start, spec.weak_info.x)
    return loaded


def load_model_file(path: PathLike) -> LoadedModel:
    """
    Load and validate a market model file.

    Args:
        path: JSON file; relative names are also looked up under settings.DATA_DIR

    Returns:
        LoadedModel

    Raises:
        FileNotFoundError: the file does not exist
        ModelValidationError: schema, name resolution or domain validation failed
    """
    resolved = resolve_path(path)
    document = read_json(resolved)
    if detect_kind(document) != "market":
        raise ModelValidationError(f"{resolved}: expected a market model file")
    try:
        spec = ModelFile.model_validate(document)
    except ValidationError as error:
        raise ModelValidationError(f"{resolved}: {_validation_message(error)}") from None
    loaded = build_model(spec, resolved)
    logger.info("loaded model %s: %d outcomes, %d assets", loaded.name, loaded.space.size, loaded.model.n_assets)
    return loaded


def load_counterexample_file(path: PathLike) -> CounterexampleFile:
    """Load a counterexample grid file."""
    resolved = resolve_path(path)
    document = read_json(resolved)
    try:
        return CounterexampleFile.model_validate(document)
    except ValidationError as error:
        raise ModelValidationError(f"{resolved}: {_validation_message(error)}") from None


def grid_from_file(spec: CounterexampleFile) -> GaussianGridSpec:
    return GaussianGridSpec(tuple(spec.cutoffs), spec.panels_per_unit, spec.order)


def load_any(path: PathLike) -> Union[LoadedModel, CounterexampleFile]:
    """Load either kind of file, dispatching on its "kind" field."""
    document = read_json(path)
    if detect_kind(document) == "counterexample":
        return load_counterexample_file(path)
    return load_model_file(path)


def bundled_files(directory: Optional[PathLike] = None) -> List[Path]:
    """Sorted JSON files of a data directory (default: settings.DATA_DIR)."""
    directory = Path(directory or settings.DATA_DIR)
    if not directory.is_dir():
        raise FileNotFoundError(f"Data directory not found: {directory}")
    return sorted(Path(directory, name) for name in os.listdir(directory) if name.endswith(".json"))
