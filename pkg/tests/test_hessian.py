import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoha.estimator import estimate_forward
from zoha.functions import catalog_objective, constant, linear, quadratic_from_matrix
from zoha.hessian import (
    DiagonalModel,
    DiagState,
    IdentityModel,
    LowRankPlusShift,
    PowerMethodConfig,
    apply_inv,
    apply_inv_sqrt,
    diag_adagrad_update,
    diag_adam_update,
    dumps_model,
    gauss_curvature_samples,
    gauss_sampling_approx,
    loads_model,
    power_method_approx,
    quality_check,
)
from zoha.oracle import QueryLedger
from zoha.sampling import GaussianSampler


def random_models(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 9))
    r = int(rng.integers(0, d + 1))
    Q, _ = np.linalg.qr(rng.standard_normal((d, max(r, 1))))
    yield IdentityModel(d)
    yield DiagonalModel(rng.uniform(0.1, 10.0, d))
    yield LowRankPlusShift(Q[:, :r], rng.uniform(0.0, 50.0, r), float(rng.uniform(0.05, 2.0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_inverse_square_root_composes_and_models_are_pd(seed):
    for model in random_models(seed):
        V = np.random.default_rng(seed + 1).standard_normal((100, model.dimension))
        twice = apply_inv_sqrt(model, apply_inv_sqrt(model, V))
        np.testing.assert_allclose(twice, apply_inv(model, V), rtol=1e-10, atol=1e-10)
        assert np.all(np.einsum("ij,ij->i", V, apply_inv(model, V)) > 0)
        np.testing.assert_allclose(model.apply(model.apply_inv(V)), V, rtol=1e-9, atol=1e-9)


def test_inv_sqrt_examples():
    model = DiagonalModel([4.0, 1.0])
    np.testing.assert_allclose(apply_inv_sqrt(model, np.array([1.0, 1.0])), [0.5, 1.0])
    np.testing.assert_allclose(apply_inv(model, np.array([1.0, 1.0])), [0.25, 1.0])
    U = np.array([[1.0], [0.0]])
    lr = LowRankPlusShift(U, [3.0], 1.0)  # diag(4, 1)
    np.testing.assert_allclose(apply_inv_sqrt(lr, np.array([1.0, 1.0])), [0.5, 1.0])
    with pytest.raises(ValueError):
        apply_inv_sqrt(model, np.ones(3))


def test_models_reject_non_pd():
    with pytest.raises(ValueError):
        DiagonalModel([1.0, 0.0])
    with pytest.raises(ValueError):
        LowRankPlusShift(np.eye(2), [1.0, 1.0], 0.0)
    with pytest.raises(ValueError):
        LowRankPlusShift(np.array([[1.0], [1.0]]), [1.0], 1.0)  # not orthonormal


@pytest.mark.parametrize("seed", range(5))
def test_model_text_round_trip(seed):
    for model in random_models(seed):
        back = loads_model(dumps_model(model))
        assert back.fingerprint() == model.fingerprint()
        np.testing.assert_array_equal(back.to_dense(), model.to_dense())


def test_loads_model_errors():
    for bad in ("", "blob 3", "diagonal 3\n1 2", "lowrank 2 1\n1.0\n2.0\n1.0"):
        with pytest.raises(ValueError):
            loads_model(bad)


def test_power_method_spiked_example():
    obj = catalog_objective("spiked20")
    cfg = PowerMethodConfig(k=2, T=10)
    led = QueryLedger()
    model, diag = power_method_approx(obj, np.ones(20), cfg, led, GaussianSampler(1))
    top = model.eigvals + model.shift
    np.testing.assert_allclose(top, 105.0, rtol=0.01)
    assert model.shift == pytest.approx(5.0, rel=0.01)
    assert led.total_queries == cfg.query_cost(20) == 4 * 20 * 2 * 11 + 4 * 20 * 3
    assert led.per_phase == {"hessian": led.total_queries}
    rep = quality_check(model, obj.hessian)
    assert rep.pencil_max <= 1.0
    assert rep.pencil_min >= 1.0 / (1.0 + 10.0 * diag.lambda_next)


def test_power_method_full_rank_floor():
    A = np.diag([4.0, 3.0, 2.0, 1.0])
    obj = quadratic_from_matrix(A)
    cfg = PowerMethodConfig(k=4, T=30)
    led = QueryLedger()
    model, diag = power_method_approx(obj, np.zeros(4), cfg, led)
    assert led.total_queries == 4 * 4 * 4 * 31
    assert diag.lambda_next == pytest.approx(1e-8 * 4.0, rel=1e-6)
    np.testing.assert_allclose(model.to_dense(), A + 5 * diag.lambda_next * np.eye(4), atol=1e-6)


def test_power_method_reseeds_collapsed_columns():
    # rank-1 Hessian: the second column collapses after the first product
    v = np.array([1.0, 2.0, 2.0]) / 3.0
    obj = quadratic_from_matrix(10.0 * np.outer(v, v))
    model, diag = power_method_approx(obj, np.zeros(3), PowerMethodConfig(k=2, T=3), QueryLedger())
    assert diag.reseeded_columns
    assert np.all(np.isfinite(model.to_dense()))
    assert model.min_eigenvalue() > 0


def test_power_method_rank_too_large():
    with pytest.raises(ValueError):
        power_method_approx(constant(2), np.zeros(2), PowerMethodConfig(k=3), QueryLedger())


def test_gauss_sampling_costs_and_trivial_cases():
    led = QueryLedger()
    m = gauss_sampling_approx(constant(3), np.zeros(3), 10, 0.1, lam=0.2, ledger=led)
    assert led.total_queries == 21
    np.testing.assert_array_equal(m.to_dense(), 0.2 * np.eye(3))
    lin = linear(np.array([1.0, -2.0, 0.5]))
    u, curv = gauss_curvature_samples(lin, np.ones(3), 50, 0.25, abs_mode=True, ledger=QueryLedger())
    assert np.all(np.abs(curv) < 1e-12)
    with pytest.raises(ValueError):
        gauss_sampling_approx(lin, np.ones(3), 0, 0.1)
    with pytest.raises(ValueError):
        gauss_sampling_approx(lin, np.ones(3), 5, 0.0)
    with pytest.raises(ValueError):
        gauss_sampling_approx(lin, np.ones(3), 5, 0.1, lam=0.0)


def test_gauss_sampling_matches_factor_and_auto_lambda():
    obj = quadratic_from_matrix(np.diag([3.0, 1.0]))
    sampler_a, sampler_b = GaussianSampler(2), GaussianSampler(2)
    model = gauss_sampling_approx(obj, np.zeros(2), 8, 0.3, lam="auto", sampler=sampler_a)
    u, curv = gauss_curvature_samples(obj, np.zeros(2), 8, 0.3, sampler=sampler_b)
    M = (u * (curv / 8)[:, None]).T @ u
    # lam comes from 5 power iterations: a Rayleigh quotient, never above 0.1 ||C||^2
    lam = model.shift
    assert 0.099 * np.linalg.norm(M, 2) <= lam <= 0.1 * np.linalg.norm(M, 2) * (1 + 1e-12)
    np.testing.assert_allclose(model.to_dense(), M + lam * np.eye(2), rtol=1e-10)


def test_negative_curvature_dropped_or_flipped():
    obj = quadratic_from_matrix(np.diag([-1.0, -1.0]))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = gauss_sampling_approx(obj, np.zeros(2), 6, 0.5, lam=1.0)
    assert any("negative curvature" in str(x.message) for x in w)
    np.testing.assert_allclose(m.to_dense(), np.eye(2))
    m_abs = gauss_sampling_approx(obj, np.zeros(2), 6, 0.5, lam=1.0, abs_mode=True)
    assert m_abs.min_eigenvalue() >= 1.0
    assert np.linalg.eigvalsh(m_abs.to_dense())[-1] > 1.0


def test_adam_update_examples():
    st0 = DiagState.zeros(2, nu=0.5)
    st1, m1 = diag_adam_update(st0, np.array([2.0, 0.0]))
    assert st1.t == 1
    np.testing.assert_allclose(st1.D, [2.0, 0.0])
    np.testing.assert_allclose(m1.entries, [4.0, 1e-8])  # bias-corrected, then floored
    st2, m2 = diag_adam_update(st1, np.array([0.0, 2.0]))
    np.testing.assert_allclose(st2.D, [1.0, 2.0])
    np.testing.assert_allclose(m2.entries, np.array([1.0, 2.0]) / 0.75)


def test_adam_nu_one_skips_correction():
    st1, m1 = diag_adam_update(DiagState(np.array([3.0]), 4, 1.0), np.array([5.0]))
    np.testing.assert_allclose(st1.D, [3.0])
    np.testing.assert_allclose(m1.entries, [3.0])


def test_adagrad_running_mean():
    st = DiagState.zeros(2)
    for g in ([1.0, 0.0], [3.0, 0.0]):
        st, m = diag_adagrad_update(st, np.array(g))
    np.testing.assert_allclose(st.D, [10.0, 0.0])
    np.testing.assert_allclose(m.entries, [5.0, 1e-8])


def test_diagonal_updates_query_nothing():
    obj = quadratic_from_matrix(np.diag([1.0, 2.0]))
    led = QueryLedger()
    est = estimate_forward(obj, np.ones(2), 0.1, 3, IdentityModel(2), GaussianSampler(0), led)
    before = led.total_queries
    diag_adam_update(DiagState.zeros(2), est)
    diag_adagrad_update(DiagState.zeros(2), est)
    assert led.total_queries == before


def test_diag_state_validation():
    with pytest.raises(ValueError):
        DiagState(np.array([-1.0]))
    with pytest.raises(ValueError):
        DiagState(np.zeros(1), nu=1.5)
    with pytest.raises(ValueError):
        DiagState(np.zeros(1), floor=0.0)


def test_quality_check_examples():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    exact = LowRankPlusShift(*_eig_parts(A))
    assert quality_check(exact, A).rho == pytest.approx(1.0)
    doubled = LowRankPlusShift(*_eig_parts(2 * A))
    rep = quality_check(doubled, A)
    assert rep.rho == pytest.approx(0.5)
    assert rep.sandwich_holds
    with pytest.raises(ValueError):
        quality_check(exact, np.array([[1.0, 2.0], [0.0, 1.0]]))


def _eig_parts(A):
    w, V = np.linalg.eigh(A)
    shift = w[0] / 2
    return V, w - shift, shift


def test_dense_fd_hessian_of_quadratic_is_exact():
    # the smoothed Hessian of a quadratic is the Hessian itself
    from zoha.oracle import hvp_fd

    A = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, -0.5], [0.0, -0.5, 2.0]])
    obj = quadratic_from_matrix(A, center=np.array([0.1, 0.2, 0.3]))
    x = np.array([0.15, 0.1, 0.35])
    H = np.column_stack([hvp_fd(obj, x, e, 0.1, QueryLedger()) for e in np.eye(3)])
    np.testing.assert_allclose(H, A, rtol=1e-10, atol=1e-10)
