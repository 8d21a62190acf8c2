"""Shared fixtures: small markets with known closed-form answers."""
import os
from pathlib import Path

import pytest
from hypothesis import settings as hypothesis_settings

from app.ingestion import load_model_file
from app.market import ClaimVector, MarketModel
from app.preferences import UtilityField
from app.prob_space import Measure

hypothesis_settings.register_profile("default", max_examples=30, deadline=None)
hypothesis_settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis_settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
MODELS_DIR = DATA_DIR / "models"
MALFORMED_DIR = DATA_DIR / "malformed"


@pytest.fixture
def trinomial():
    """One-period market with S0 = 1 and terminal prices (2, 1, 0.5)."""
    return MarketModel.one_period(["w1", "w2", "w3"], 1.0, [2.0, 1.0, 0.5])


@pytest.fixture
def binomial():
    """One-period complete market with martingale measure (1/3, 2/3)."""
    return MarketModel.one_period(["up", "down"], 1.0, [2.0, 0.5])


@pytest.fixture
def uniform(trinomial):
    return Measure.uniform(trinomial.space)


@pytest.fixture
def log_utility(trinomial):
    return UtilityField.log(trinomial.space)


@pytest.fixture
def sqrt_utility(trinomial):
    """x^(1/2) / (1/2) = 2 sqrt(x)."""
    return UtilityField.power(trinomial.space, 0.5)


@pytest.fixture
def digital(trinomial):
    """Pays 1 on the top outcome only; not replicable in the trinomial market."""
    return ClaimVector(trinomial.space, [1.0, 0.0, 0.0], "f1")


@pytest.fixture
def stock_claim(trinomial):
    return ClaimVector(trinomial.space, [2.0, 1.0, 0.5], "stock")


@pytest.fixture
def loaded_trinomial():
    return load_model_file(MODELS_DIR / "trinomial.json")


@pytest.fixture
def loaded_binomial():
    return load_model_file(MODELS_DIR / "binomial.json")


@pytest.fixture
def loaded_two_factor():
    return load_model_file(MODELS_DIR / "two_factor.json")
