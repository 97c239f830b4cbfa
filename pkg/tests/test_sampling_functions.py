import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoha.functions import (
    CATALOG,
    MOMENT_CATALOG,
    QuadraticSpec,
    catalog_objective,
    householder_rotation,
    make_quadratic,
)
from zoha.sampling import GaussianSampler, SamplerState


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), split=st.integers(0, 20), d=st.integers(1, 5))
def test_split_draws_equal_one_shot(seed, split, d):
    one = GaussianSampler(seed, (1, 2)).draw(20, d)
    s = GaussianSampler(seed, (1, 2))
    parts = np.concatenate([s.draw(split, d), s.draw(20 - split, d)])
    assert np.array_equal(one, parts)


def test_state_resumes_stream():
    s = GaussianSampler(5, (3,))
    s.draw(7, 2)
    state = s.state
    assert isinstance(state, SamplerState)
    ahead = s.draw(4, 2)
    assert np.array_equal(GaussianSampler.from_state(state).draw(4, 2), ahead)


def test_keys_give_independent_streams():
    a = GaussianSampler(1, (1, 0)).draw(3, 3)
    b = GaussianSampler(1, (1, 1)).draw(3, 3)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("d", [1, 4, 20])
def test_householder_is_orthogonal(d):
    Q = householder_rotation(d, 3)
    np.testing.assert_allclose(Q.T @ Q, np.eye(d), atol=1e-12)


def test_quadratic_spectrum_and_value():
    spec = QuadraticSpec(np.array([5.0, 2.0, 1.0]), rotation_seed=4, center=np.array([1.0, 0.0, -1.0]))
    obj = make_quadratic(spec)
    np.testing.assert_allclose(np.linalg.eigvalsh(obj.hessian), [1, 2, 5], rtol=1e-12)
    assert obj.evaluator(spec.center) == 0.0
    assert obj.metadata.smoothness == 5.0 and obj.metadata.strong_convexity == 1.0


def test_quadratic_spec_validation():
    with pytest.raises(ValueError):
        QuadraticSpec(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        QuadraticSpec(np.array([1.0, -1.0]))


def test_catalog_entries():
    assert set(MOMENT_CATALOG) <= set(CATALOG)
    for name in MOMENT_CATALOG:
        assert catalog_objective(name).dimension <= 8
    obj = catalog_objective("lowrank50")
    ev = np.sort(np.linalg.eigvalsh(obj.hessian))[::-1]
    np.testing.assert_allclose(ev[:5], 100.0)
    np.testing.assert_allclose(ev[5:], 1.0)
    with pytest.raises(KeyError):
        catalog_objective("nope")
