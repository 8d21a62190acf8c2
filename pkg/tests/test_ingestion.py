"""Tests for model and counterexample file loading."""
import pytest

from app.config import settings
from app.errors import EquivalenceViolation, ModelValidationError, NoArbitrageViolation
from app.ingestion import (
    LoadedModel,
    bundled_files,
    grid_from_file,
    load_any,
    load_counterexample_file,
    load_model_file,
    resolve_path,
)
from app.schemas import CounterexampleFile
from tests.conftest import MALFORMED_DIR, MODELS_DIR

MALFORMED = sorted(p.name for p in MALFORMED_DIR.glob("*.json"))


def test_bundled_models_load():
    """Test that every bundled file loads as its declared kind."""
    files = bundled_files(MODELS_DIR)
    assert len(files) == 7
    for path in files:
        loaded = load_any(path)
        assert isinstance(loaded, (LoadedModel, CounterexampleFile))


@pytest.mark.parametrize("name", MALFORMED)
def test_malformed_files_rejected(name):
    """Test that every malformed file fails validation."""
    with pytest.raises((ModelValidationError, EquivalenceViolation, NoArbitrageViolation)):
        load_any(MALFORMED_DIR / name)


def test_arbitrage_is_reported_as_such():
    """Test the no-arbitrage check on a never-losing asset."""
    with pytest.raises(NoArbitrageViolation):
        load_model_file(MALFORMED_DIR / "07_arbitrage.json")


def test_missing_file():
    """Test that a missing file is a FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        load_model_file("does_not_exist.json")


def test_resolve_path_uses_data_dir(monkeypatch):
    """Test lookup of bare names under DATA_DIR."""
    monkeypatch.setattr(settings, "DATA_DIR", str(MODELS_DIR))
    assert resolve_path("trinomial.json") == MODELS_DIR / "trinomial.json"
    assert load_model_file("binomial.json").name == "binomial"


def test_model_file_rejects_counterexample():
    """Test that a counterexample file is not a market model."""
    with pytest.raises(ModelValidationError):
        load_model_file(MODELS_DIR / "primal_asui1.json")


def test_trinomial_contents(loaded_trinomial):
    """Test measures, claims and scenario sets of the trinomial file."""
    assert loaded_trinomial.space.outcomes == ("w1", "w2", "w3")
    assert loaded_trinomial.P.as_dict() == pytest.approx({"w1": 1 / 3, "w2": 1 / 3, "w3": 1 / 3})
    assert loaded_trinomial.measure("P0")["w1"] == pytest.approx(0.5)
    assert loaded_trinomial.measure("base") is loaded_trinomial.P
    assert set(loaded_trinomial.claims) == {"f1", "stock", "const"}
    assert len(loaded_trinomial.scenario_set()) == 3
    assert len(loaded_trinomial.scenario_set("grid")) == 6
    with pytest.raises(ModelValidationError):
        loaded_trinomial.scenario_set("missing")
    with pytest.raises(ModelValidationError):
        loaded_trinomial.claim("missing")


def test_scenario_labels(loaded_trinomial):
    """Test that every scenario in a set has a distinct label."""
    for scenarios in loaded_trinomial.scenarios.values():
        labels = [s.name for s in scenarios]
        assert len(labels) == len(set(labels))


def test_weak_info_block(loaded_binomial):
    """Test the random element and laws of the binomial file."""
    setup = loaded_binomial.weak_info
    assert setup is not None
    assert set(setup.Y.label_set) == {"up", "down"}
    assert setup.nu["up"] == pytest.approx(0.6)
    assert setup.nu_start["up"] == pytest.approx(0.3)


def test_two_period_branching():
    """Test that a branching spec builds the two-period tree."""
    loaded = load_model_file(MODELS_DIR / "binomial_two_period.json")
    assert loaded.space.outcomes == ("uu", "ud", "du", "dd")
    assert loaded.utility.name == "power(0.5)"


def test_counterexample_file():
    """Test the grid of a counterexample file."""
    spec = load_counterexample_file(MODELS_DIR / "primal_asui1.json")
    assert spec.which == "assumption_asUI1"
    assert spec.terms == 8
    grid = grid_from_file(spec)
    assert grid.cutoffs == (2.0, 4.0, 6.0, 8.0, 10.0)
