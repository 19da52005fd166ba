"""Return mapping and tangent checks against tensor-notation oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from tfetiplast.errors import ZeroDeviator
from tfetiplast.material import (
    MaterialParams,
    PlasticState,
    consistent_tangent,
    deviatoric_matrices,
    deviator,
    flow_direction,
    hooke_matrix,
    return_mapping,
    sigma_norm,
    stress_update,
    von_mises_norm,
    yield_function,
)

PAIRS = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]


# -- tensor oracles ----------------------------------------------------------


def strain_tensor(v):
    e = np.zeros((3, 3))
    for a, (i, j) in enumerate(PAIRS):
        e[i, j] = e[j, i] = v[a] if a < 3 else 0.5 * v[a]
    return e


def stress_tensor(v):
    s = np.zeros((3, 3))
    for a, (i, j) in enumerate(PAIRS):
        s[i, j] = s[j, i] = v[a]
    return s


def stress_voigt(s):
    return np.array([s[i, j] for i, j in PAIRS])


def hooke_tensor_apply(params, eps):
    return params.lam * np.trace(eps) * np.eye(3) + 2.0 * params.mu * eps


def dev_t(s):
    return s - np.trace(s) / 3.0 * np.eye(3)


def oracle_return_map(sigma_k, kappa_k, deps, params):
    """Radial return written in tensor form with the plastic multiplier from brentq.

    Solves sqrt(3/2)|dev(s_trial) - 2 mu dgamma n| = sigma_y + H (kappa + sqrt(2/3) dgamma)
    for the plastic strain increment magnitude dgamma directly.
    """
    s_tr = stress_tensor(sigma_k) + hooke_tensor_apply(params, strain_tensor(deps))
    d = dev_t(s_tr)
    nd = np.linalg.norm(d)
    yield_stress = lambda g: params.sigma_y + params.hardening_modulus * (kappa_k + np.sqrt(2 / 3) * g)
    if np.sqrt(1.5) * nd - yield_stress(0.0) <= 0.0:
        return stress_voigt(s_tr), kappa_k
    n = d / nd

    def residual(g):
        return np.sqrt(1.5) * (nd - 2.0 * params.mu * g) - yield_stress(g)

    g = brentq(residual, 0.0, nd / (2.0 * params.mu), xtol=1e-16, rtol=1e-15)
    s_new = s_tr - 2.0 * params.mu * g * n
    return stress_voigt(s_new), kappa_k + np.sqrt(2 / 3) * g


# -- parameters ----------------------------------------------------------------


def test_lame_constants_from_benchmark_values(steel):
    # lambda is printed as 110743.8; mu follows from E / (2 (1 + nu)) = 80193.8
    assert steel.lam == pytest.approx(110743.8, abs=0.05)
    assert steel.mu == pytest.approx(206900.0 / 2.58)
    assert steel.young == pytest.approx(206900.0)


@pytest.mark.parametrize("field", ["lam", "mu", "sigma_y", "hardening_modulus"])
def test_params_reject_nonpositive(field):
    values = dict(lam=1.0, mu=1.0, sigma_y=1.0, hardening_modulus=1.0)
    values[field] = 0.0
    with pytest.raises(ValueError):
        MaterialParams(**values)


def test_poisson_range_checked():
    with pytest.raises(ValueError):
        MaterialParams.from_engineering(1.0, 0.5, 1.0, 1.0)


def test_state_rejects_negative_kappa():
    with pytest.raises(ValueError):
        PlasticState(kappa=-1e-3)


# -- Voigt algebra ---------------------------------------------------------------


def test_hooke_matches_tensor_law(steel, rng):
    C = hooke_matrix(steel)
    for _ in range(20):
        e = rng.normal(size=6)
        expected = stress_voigt(hooke_tensor_apply(steel, strain_tensor(e)))
        np.testing.assert_allclose(C @ e, expected, rtol=1e-13, atol=1e-9)


def test_voigt_pairing_is_frobenius_product(rng):
    s, e = rng.normal(size=6), rng.normal(size=6)
    assert s @ e == pytest.approx(np.sum(stress_tensor(s) * strain_tensor(e)))


def test_deviatoric_matrices(steel, rng):
    E_eps, E_sig, P = deviatoric_matrices()
    np.testing.assert_allclose(E_sig, P @ E_eps)
    np.testing.assert_allclose(2.0 * steel.mu * E_eps, E_sig @ hooke_matrix(steel), atol=1e-9)
    np.testing.assert_allclose(E_sig @ E_sig, E_sig, atol=1e-15)
    tau = rng.normal(size=6)
    np.testing.assert_allclose(deviator(tau), E_sig @ tau, atol=1e-14)
    np.testing.assert_allclose(stress_tensor(deviator(tau)), dev_t(stress_tensor(tau)), atol=1e-14)
    assert sigma_norm(tau) == pytest.approx(np.linalg.norm(stress_tensor(tau)))
    assert von_mises_norm(tau) == pytest.approx(np.linalg.norm(dev_t(stress_tensor(tau))))


def test_uniaxial_yield_value(steel):
    # uniaxial stress s: sqrt(3/2)|dev| = |s|
    tau = np.array([300.0, 0, 0, 0, 0, 0])
    assert yield_function(tau, 0.0, steel) == pytest.approx(300.0 - 450.0)
    assert yield_function(tau, 0.01, steel) == pytest.approx(300.0 - 550.0)


def test_flow_direction_unit_and_deviatoric(rng):
    n = flow_direction(rng.normal(size=6))
    assert sigma_norm(n) == pytest.approx(1.0)
    assert n[:3].sum() == pytest.approx(0.0, abs=1e-14)


def test_flow_direction_pure_pressure_raises():
    with pytest.raises(ZeroDeviator):
        flow_direction(np.array([5.0, 5.0, 5.0, 0.0, 0.0, 0.0]))


# -- return mapping ----------------------------------------------------------------


def test_zero_increment_from_virgin_state_is_elastic(steel):
    res = return_mapping(PlasticState(), np.zeros(6), steel)
    assert not res.plastic
    assert res.delta_kappa == 0.0
    np.testing.assert_array_equal(res.delta_sigma, np.zeros(6))


def test_yield_surface_tie_counts_as_elastic():
    params = MaterialParams(1.0, 1.0, 1.0, 1.0)
    sigma = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])  # exactly on the surface
    assert yield_function(sigma, 0.0, params) == pytest.approx(0.0, abs=1e-15)
    res = return_mapping((sigma, 0.0), np.zeros(6), params)
    assert not res.plastic


def test_uniaxial_hand_computed_plastic_step():
    # lam = mu = 1, sigma_y = 1, H = 1: trial deviator norm 4/sqrt(6)*... computed by hand
    params = MaterialParams(1.0, 1.0, 1.0, 1.0)
    d_eps = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    # trial = (3, 1, 1, 0, 0, 0), dev = (4/3, -2/3, -2/3), |dev| = sqrt(24)/3
    # Phi = sqrt(3/2) * sqrt(24)/3 - 1 = 2 - 1 = 1 ; dkappa = 1 / (3 + 1)
    res = return_mapping(PlasticState(), d_eps, params)
    assert res.plastic
    assert res.delta_kappa == pytest.approx(0.25)
    np.testing.assert_allclose(res.trial_stress, [3, 1, 1, 0, 0, 0])
    # beta = 3/4, correction = 3/4 * sqrt(2/3) * 1 * n, n = dev/|dev|
    n = np.array([4, -2, -2, 0, 0, 0]) / 3 / (np.sqrt(24) / 3)
    np.testing.assert_allclose(res.delta_sigma, [3, 1, 1, 0, 0, 0] - 0.75 * np.sqrt(2 / 3) * n)
    new = res.trial_stress - 0.75 * np.sqrt(2 / 3) * n
    assert yield_function(new, 0.25, params) == pytest.approx(0.0, abs=1e-14)


def _random_case(rng, params, scale=None):
    scale = scale or 0.3 * params.sigma_y / params.mu
    sigma = rng.normal(size=6) * params.sigma_y * 0.4
    kappa = abs(rng.normal()) * 1e-3
    deps = rng.normal(size=6) * scale
    return sigma, kappa, deps


def test_return_mapping_matches_tensor_oracle(steel, rng):
    plastic_seen = 0
    for _ in range(300):
        sigma, kappa, deps = _random_case(rng, steel)
        res = return_mapping((sigma, kappa), deps, steel)
        s_ref, k_ref = oracle_return_map(sigma, kappa, deps, steel)
        np.testing.assert_allclose(sigma + res.delta_sigma, s_ref, rtol=1e-10, atol=1e-9 * steel.sigma_y)
        assert kappa + res.delta_kappa == pytest.approx(k_ref, rel=1e-9, abs=1e-15)
        plastic_seen += res.plastic
    assert 50 < plastic_seen < 300


def test_batched_update_equals_single_calls(steel, rng):
    cases = [_random_case(rng, steel) for _ in range(40)]
    sig = np.array([c[0] for c in cases])
    kap = np.array([c[1] for c in cases])
    deps = np.array([c[2] for c in cases])
    dsig, dkap, plastic, _, tangent = stress_update(sig, kap, deps, steel, with_tangent=True)
    for i, (s, k, e) in enumerate(cases):
        r = return_mapping((s, k), e, steel)
        # batched BLAS may round differently in the last bit
        np.testing.assert_allclose(dsig[i], r.delta_sigma, rtol=1e-14, atol=1e-12)
        assert dkap[i] == pytest.approx(r.delta_kappa, rel=1e-14, abs=1e-300)
        assert plastic[i] == r.plastic
        np.testing.assert_allclose(tangent[i], consistent_tangent((s, k), e, steel), rtol=1e-13, atol=1e-8)


# -- tangent ------------------------------------------------------------------------


def _stress_operator(sigma, kappa, params):
    def T(e):
        return return_mapping((sigma, kappa), e, params).delta_sigma

    return T


def test_tangent_elastic_branch_is_hooke(steel):
    T = consistent_tangent(PlasticState(), np.full(6, 1e-7), steel)
    np.testing.assert_array_equal(T, hooke_matrix(steel))


def test_tangent_matches_central_differences(steel, rng):
    checked = 0
    for _ in range(200):
        sigma, kappa, deps = _random_case(rng, steel)
        T = consistent_tangent((sigma, kappa), deps, steel)
        op = _stress_operator(sigma, kappa, steel)
        h = 1e-6 * np.linalg.norm(deps)
        phi0 = yield_function(sigma + hooke_matrix(steel) @ deps, kappa, steel)
        if abs(phi0) < 1e-3 * steel.sigma_y:
            continue  # too close to the kink for differencing
        fd = np.column_stack([(op(deps + h * e) - op(deps - h * e)) / (2 * h) for e in np.eye(6)])
        assert np.linalg.norm(fd - T) <= 1e-5 * np.linalg.norm(T)
        checked += 1
    assert checked > 150


def test_tangent_is_symmetric(steel, rng):
    for _ in range(50):
        sigma, kappa, deps = _random_case(rng, steel)
        T = consistent_tangent((sigma, kappa), deps, steel)
        np.testing.assert_allclose(T, T.T, atol=1e-8 * np.abs(T).max())


def test_tangent_spectral_sandwich(steel, rng):
    C = hooke_matrix(steel)
    c = steel.tangent_lower_bound
    for _ in range(200):
        sigma, kappa, deps = _random_case(rng, steel)
        T = consistent_tangent((sigma, kappa), deps, steel)
        for _ in range(5):
            xi = rng.normal(size=6)
            cq, tq = xi @ C @ xi, xi @ T @ xi
            assert cq - tq >= -1e-10 * cq
            assert tq - c * cq >= -1e-10 * cq


def test_residual_of_potential_gradient(steel, rng):
    """T is the gradient of psi(eta) = 1/2 eta.C.eta - (Phi+)^2 / (2 (3 mu + H))."""
    sigma, kappa = np.zeros(6), 0.0

    def psi(eta):
        phi = max(yield_function(sigma + hooke_matrix(steel) @ eta, kappa, steel), 0.0)
        return 0.5 * eta @ hooke_matrix(steel) @ eta - phi**2 / (2 * (3 * steel.mu + steel.hardening_modulus))

    for _ in range(20):
        eta = rng.normal(size=6) * 5 * steel.sigma_y / steel.mu
        h = 1e-7 * np.linalg.norm(eta)
        grad = np.array([(psi(eta + h * e) - psi(eta - h * e)) / (2 * h) for e in np.eye(6)])
        T = return_mapping((sigma, kappa), eta, steel).delta_sigma
        np.testing.assert_allclose(grad, T, rtol=1e-6, atol=1e-6 * np.linalg.norm(T))


# -- properties ----------------------------------------------------------------------

finite = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(
    sig=st.lists(finite, min_size=6, max_size=6),
    eps=st.lists(finite, min_size=6, max_size=6),
    kappa=st.floats(0.0, 0.05),
    scale=st.floats(1e-4, 1e-1),
)
def test_kkt_conditions_hold(sig, eps, kappa, scale):
    params = MaterialParams.from_engineering(206900.0, 0.29, 450.0, 10000.0)
    sigma = np.asarray(sig) * 300.0
    res = return_mapping((sigma, kappa), np.asarray(eps) * scale, params)
    new_phi = yield_function(sigma + res.delta_sigma, kappa + res.delta_kappa, params)
    assert res.delta_kappa >= 0.0
    tol = 1e-9 * params.sigma_y
    assert new_phi <= tol
    assert abs(res.delta_kappa * new_phi) <= tol


@settings(max_examples=100, deadline=None)
@given(eps=st.lists(finite, min_size=6, max_size=6), p=st.floats(-1e3, 1e3))
def test_hydrostatic_part_is_always_elastic(eps, p):
    """The return only touches the deviator; the mean stress follows Hooke's law."""
    params = MaterialParams.from_engineering(206900.0, 0.29, 450.0, 10000.0)
    sigma = np.array([p, p, p, 0.0, 0.0, 0.0])
    deps = np.asarray(eps) * 1e-2
    res = return_mapping((sigma, 0.0), deps, params)
    bulk = params.lam + 2.0 * params.mu / 3.0
    assert res.delta_sigma[:3].mean() == pytest.approx(bulk * deps[:3].sum(), rel=1e-9, abs=1e-9)
