"""Tests for the full pipeline."""
import pytest

from app.pipeline.run_full import run_full_pipeline
from tests.conftest import MALFORMED_DIR, MODELS_DIR


def test_pipeline_trinomial():
    """Test every step on the incomplete trinomial model."""
    results = run_full_pipeline(MODELS_DIR / "trinomial.json")
    assert results['status'] == 'success'
    assert results['errors'] == []
    assert results['validation']['complete'] is False
    assert results['prices']['f1']['price'] == pytest.approx(2.0 / 9.0, abs=1e-8)
    assert results['invariance']['replicable_dimension'] == 2
    assert 'value_informed' not in results['weak_info']
    assert set(results['weak_info']['price_impact']) == {'f1', 'stock', 'const'}


def test_pipeline_complete_model():
    """Test the weak-information values on the binomial model."""
    results = run_full_pipeline(MODELS_DIR / "binomial.json", utility="log")
    assert results['status'] == 'success'
    assert results['validation']['complete'] is True
    assert results['prices']['call']['price'] == pytest.approx(1.0 / 3.0, abs=1e-8)
    assert results['weak_info']['certainty_equivalent'] > 0


def test_pipeline_invalid_model():
    """Test that a validation failure stops the pipeline."""
    results = run_full_pipeline(MALFORMED_DIR / "03_measure_not_normalized.json")
    assert results['status'] == 'error'
    assert results['errors'][0].startswith('Validation error')
    assert results['solve'] == {}


def test_pipeline_partial_success():
    """Test that a failing step is recorded without aborting the rest."""
    results = run_full_pipeline(MODELS_DIR / "trinomial.json", x=-1.0)
    assert results['status'] == 'partial_success'
    assert 'error' in results['solve']
    assert results['validation']['name'] == 'trinomial'
