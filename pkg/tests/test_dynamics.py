import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from gausscool import (
    CovarianceMatrix,
    Estimator,
    FeedbackLaw,
    Scheme,
    SystemParams,
    direct_moment_rhs,
    operating_point,
    sigma_c_rhs,
    sigma_m_rhs,
    stability_eigenvalues,
    steady_sigma_c,
    steady_sigma_m,
)
from gausscool.dynamics import direct_noise_vector, estimate_drift, lyapunov_operator, sym_mat, sym_vec
from gausscool.errors import NoConvergence, NotHurwitz, UnsupportedEstimator, UnsupportedScheme
from gausscool.gaussian import default_params

import oracles

SCHEMES = (Scheme.QND_POSITION, Scheme.ANNIHILATION_HOMODYNE, Scheme.DUAL_NO_DAMP)
MID = SystemParams(omega=1.0, gamma=0.1, nbar=2.0, k=0.3, eta=0.5)
ORACLE_NAME = {Scheme.QND_POSITION: "qnd", Scheme.ANNIHILATION_HOMODYNE: "homodyne", Scheme.DUAL_NO_DAMP: "dual"}


@st.composite
def physical_cov(draw):
    sxx = draw(st.floats(0.1, 20.0))
    excess = draw(st.floats(0.0, 10.0))
    sxp = draw(st.floats(-3.0, 3.0))
    return CovarianceMatrix(sxx, (0.25 + excess + sxp * sxp) / sxx, sxp)


@st.composite
def psd_cov(draw):
    sxx = draw(st.floats(0.0, 10.0))
    spp = draw(st.floats(0.0, 10.0))
    rho = draw(st.floats(-1.0, 1.0))
    return CovarianceMatrix(sxx, spp, rho * math.sqrt(sxx * spp))


params_st = st.builds(
    SystemParams,
    omega=st.just(1.0),
    gamma=st.floats(1e-3, 1.0),
    nbar=st.floats(0.0, 50.0),
    k=st.floats(1e-3, 3.0),
    eta=st.floats(0.05, 1.0),
)


def explicit_qnd_rhs(s, p):
    """Component equations of the QND conditional flow, written out by hand."""
    keta8 = 8 * p.k * p.eta
    th = p.nbar + 0.5
    dxx = -p.gamma * s.sxx + p.gamma * th + 2 * p.omega * s.sxp - keta8 * s.sxx ** 2
    dpp = -p.gamma * s.spp + p.gamma * th - 2 * p.omega * s.sxp + 2 * p.k - keta8 * s.sxp ** 2
    dxp = -p.gamma * s.sxp + p.omega * (s.spp - s.sxx) - keta8 * s.sxx * s.sxp
    return np.array([dxx, dpp, dxp])


# sigma_c_rhs

def test_thermal_fixed_point_without_measurement():
    p = SystemParams(gamma=0.2, nbar=3.0, k=0.0, eta=1.0)
    rhs = sigma_c_rhs(CovarianceMatrix.thermal(p.nbar), p, Scheme.QND_POSITION).total
    assert np.all(rhs == 0.0)


def test_pure_measurement_xx_rate():
    p = SystemParams(omega=1.0, gamma=0.0, k=1.0, eta=0.5)
    rhs = sigma_c_rhs(CovarianceMatrix(1.0, 1.0, 0.0), p, Scheme.PURE_MEASUREMENT).total
    assert rhs[0, 0] == pytest.approx(-4.0, rel=1e-15)


def test_steady_state_residual_default_params():
    p = default_params()
    cov = steady_sigma_c(p, Scheme.QND_POSITION)
    assert np.linalg.norm(sigma_c_rhs(cov, p, Scheme.QND_POSITION).total) < 1e-12


@given(physical_cov(), params_st)
def test_qnd_rhs_matches_component_equations(cov, p):
    got = sym_vec(sigma_c_rhs(cov, p, Scheme.QND_POSITION).total)
    want = explicit_qnd_rhs(cov, p)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12 * (1 + np.max(np.abs(want))))


@given(physical_cov(), psd_cov(), params_st, st.sampled_from(SCHEMES), st.floats(0, 10), st.floats(0, 10))
def test_conditioning_cancels_in_average(cov_c, cov_m, p, scheme, g1, g2):
    law = FeedbackLaw(Estimator.KALMAN_XP, a_x=g1, b_p=g2)
    c = sigma_c_rhs(cov_c, p, scheme)
    m = sigma_m_rhs(cov_m, cov_c, law, p, scheme)
    scale = 1 + np.max(np.abs(c.conditioning))
    assert np.max(np.abs(c.conditioning + m.conditioning)) <= 1e-12 * scale


@given(physical_cov(), params_st, st.sampled_from(SCHEMES))
def test_stages_sum_to_total(cov, p, scheme):
    st_ = sigma_c_rhs(cov, p, scheme)
    parts = st_.bath + st_.hamiltonian + st_.feedback + st_.backaction + st_.conditioning
    assert np.allclose(parts, st_.total, rtol=1e-12, atol=0)
    assert np.all(st_.feedback == 0)


@given(physical_cov(), params_st)
def test_hamiltonian_stage_preserves_det(cov, p):
    ham = sigma_c_rhs(cov, p, Scheme.QND_POSITION).hamiltonian
    ddet = np.sum(cov.adjugate() * ham.T)
    assert abs(ddet) <= 1e-12 * (1 + cov.sxx * cov.spp)


# sigma_m_rhs and direct flow

def test_no_information_no_feedback_keeps_zero():
    p = SystemParams(gamma=0.1, nbar=1.0, k=0.0)
    zero = CovarianceMatrix.zero()
    rhs = sigma_m_rhs(zero, CovarianceMatrix.thermal(1.0), FeedbackLaw(), p, Scheme.QND_POSITION).total
    assert np.all(rhs == 0.0)


def test_feedback_stage_xx_entry():
    g = 3.7
    m = CovarianceMatrix(0.8, 0.6, 0.1)
    rhs = sigma_m_rhs(m, CovarianceMatrix(1.0, 1.0, 0.0), FeedbackLaw.kalman_xp(g), MID, Scheme.QND_POSITION)
    assert rhs.feedback[0, 0] == pytest.approx(-2 * g * m.sxx, rel=1e-15)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_gains_zero_sum_matches_unconditional_lyapunov(scheme):
    cov_c = steady_sigma_c(MID, scheme)
    cov_m = steady_sigma_m(cov_c, FeedbackLaw(), MID, scheme)
    want = oracles.unconditional_covariance(1.0, MID.gamma, MID.nbar, MID.k, ORACLE_NAME[scheme])
    assert np.allclose((cov_c + cov_m).matrix(), want, atol=1e-9, rtol=0)


def test_direct_zero_gain_reduces_to_kalman():
    cov_c = steady_sigma_c(MID, Scheme.QND_POSITION)
    m = CovarianceMatrix(0.3, 0.2, 0.05)
    d = direct_moment_rhs(m, cov_c, FeedbackLaw.direct(0.0, 0.0), MID)
    k = sigma_m_rhs(m, cov_c, FeedbackLaw(), MID, Scheme.QND_POSITION)
    assert np.allclose(d.total, k.total, rtol=1e-15, atol=0)


def test_direct_kick_cancels_innovation():
    cov_c = steady_sigma_c(MID, Scheme.QND_POSITION)
    keta8 = 8 * MID.k * MID.eta
    law = FeedbackLaw.direct(keta8 * cov_c.sxx, keta8 * cov_c.sxp)
    assert np.allclose(direct_noise_vector(cov_c, law, MID), 0.0, atol=1e-15)
    rhs = direct_moment_rhs(CovarianceMatrix.zero(), cov_c, law, MID)
    assert np.allclose(rhs.total, 0.0, atol=1e-14)


def test_direct_flow_rejects_kalman_law():
    with pytest.raises(UnsupportedEstimator):
        direct_moment_rhs(CovarianceMatrix.zero(), CovarianceMatrix.thermal(0), FeedbackLaw.kalman_xp(1.0), MID)
    with pytest.raises(UnsupportedEstimator):
        sigma_m_rhs(CovarianceMatrix.zero(), CovarianceMatrix.thermal(0), FeedbackLaw.direct(1.0), MID,
                    Scheme.QND_POSITION)


# steady_sigma_c

def test_vanishing_measurement_gives_thermal():
    p = SystemParams(gamma=0.05, nbar=4.0, k=1e-12, eta=1.0)
    cov = steady_sigma_c(p, Scheme.QND_POSITION)
    assert cov.sxx == pytest.approx(4.5, rel=1e-8)
    assert cov.spp == pytest.approx(4.5, rel=1e-8)
    assert abs(cov.sxp) < 1e-8


@pytest.mark.parametrize("k", [0.01, 0.18, 1.0, 5.0])
def test_quartic_root_closed_system(k):
    p = SystemParams(omega=1.0, gamma=0.0, nbar=0.0, k=k, eta=1.0)
    cov = steady_sigma_c(p, Scheme.QND_POSITION)
    want = oracles.quartic_sigma_c(k)
    assert np.allclose(cov.vec(), want, rtol=0, atol=1e-10)
    assert np.linalg.norm(explicit_qnd_rhs(CovarianceMatrix(*want), p)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(params_st, st.sampled_from(SCHEMES))
def test_steady_sigma_c_matches_care(p, scheme):
    cov = steady_sigma_c(p, scheme)
    want = oracles.riccati_care(p.omega, p.gamma, p.nbar, p.k, p.eta, ORACLE_NAME[scheme])
    assert np.allclose(cov.matrix(), want, rtol=1e-8, atol=1e-9)
    assert cov.det >= 0.25 - 1e-12


@pytest.mark.parametrize("scheme", SCHEMES)
def test_default_params_care(scheme):
    p = default_params()
    cov = steady_sigma_c(p, scheme)
    want = oracles.riccati_care(p.omega, p.gamma, p.nbar, p.k, p.eta, ORACLE_NAME[scheme])
    assert np.allclose(cov.matrix(), want, rtol=1e-8, atol=1e-10)


def test_frequency_choice_barely_matters():
    base = default_params()
    other = SystemParams.from_bath_product(0.18, 0.34, 0.0058, T_kelvin=292.0, freq_hz=3e5)
    a = steady_sigma_c(base, Scheme.QND_POSITION)
    b = steady_sigma_c(other, Scheme.QND_POSITION)
    assert abs(0.5 * (a.trace - b.trace)) / (0.5 * a.trace) < 1e-6


def test_pure_measurement_has_no_steady_state():
    with pytest.raises(NoConvergence):
        steady_sigma_c(SystemParams(k=1.0), Scheme.PURE_MEASUREMENT)


def test_no_bath_no_measurement_fails():
    with pytest.raises(NoConvergence):
        steady_sigma_c(SystemParams(gamma=0.0, k=0.0), Scheme.QND_POSITION)


# steady_sigma_m

@pytest.mark.parametrize("law", [
    FeedbackLaw.kalman_xp(0.7),
    FeedbackLaw.kalman_x_only(0.4),
    FeedbackLaw(Estimator.KALMAN_XP, a_x=0.3, a_p=0.2, b_x=-0.1, b_p=0.5),
])
def test_steady_sigma_m_matches_time_march(law):
    cov_c = steady_sigma_c(MID, Scheme.QND_POSITION)
    got = steady_sigma_m(cov_c, law, MID, Scheme.QND_POSITION)

    def rhs(_t, y):
        return sym_vec(sigma_m_rhs(CovarianceMatrix(*y), cov_c, law, MID, Scheme.QND_POSITION).total)

    sol = solve_ivp(rhs, (0, 600), np.zeros(3), method="LSODA", rtol=1e-12, atol=1e-14)
    assert np.allclose(sol.y[:, -1], got.vec(), rtol=0, atol=1e-8)


def test_direct_steady_matches_time_march():
    cov_c = steady_sigma_c(MID, Scheme.QND_POSITION)
    law = FeedbackLaw.direct(0.4)
    got = steady_sigma_m(cov_c, law, MID, Scheme.QND_POSITION)

    def rhs(_t, y):
        return sym_vec(direct_moment_rhs(CovarianceMatrix(*y), cov_c, law, MID).total)

    sol = solve_ivp(rhs, (0, 600), np.zeros(3), method="LSODA", rtol=1e-12, atol=1e-14)
    assert np.allclose(sol.y[:, -1], got.vec(), rtol=0, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(params_st, st.floats(0, 20), st.floats(0, 20), st.floats(-5, 5), st.floats(-5, 5))
def test_steady_sigma_m_psd_when_hurwitz(p, a_x, b_p, a_p, b_x):
    law = FeedbackLaw(Estimator.KALMAN_XP, a_x=a_x, a_p=a_p, b_x=b_x, b_p=b_p)
    cov_c = steady_sigma_c(p, Scheme.QND_POSITION)
    try:
        m = steady_sigma_m(cov_c, law, p, Scheme.QND_POSITION)
    except NotHurwitz:
        assert np.max(stability_eigenvalues(law, p).real) >= -1e-12
        return
    scale = max(1.0, m.sxx, m.spp)
    assert m.sxx >= -1e-12 * scale and m.spp >= -1e-12 * scale
    assert m.det >= -1e-10 * scale ** 2


def test_marginal_system_not_hurwitz():
    p = SystemParams(gamma=0.0, k=0.2, eta=1.0)
    cov_c = steady_sigma_c(p, Scheme.QND_POSITION)
    with pytest.raises(NotHurwitz):
        steady_sigma_m(cov_c, FeedbackLaw(), p, Scheme.QND_POSITION)


def test_direct_needs_qnd():
    cov_c = steady_sigma_c(MID, Scheme.DUAL_NO_DAMP)
    with pytest.raises(UnsupportedScheme):
        steady_sigma_m(cov_c, FeedbackLaw.direct(1.0), MID, Scheme.DUAL_NO_DAMP)


def test_steady_sigma_m_vanishes_like_one_over_g():
    p = default_params()
    cov_c = steady_sigma_c(p, Scheme.QND_POSITION)
    prev = None
    for g in (1e2, 1e3, 1e4):
        m = steady_sigma_m(cov_c, FeedbackLaw.kalman_xp(g), p, Scheme.QND_POSITION)
        scaled = g * np.abs(m.vec())
        if prev is not None:
            assert np.all(scaled <= 1.1 * prev + 1e-12)
        prev = scaled
    assert max(abs(v) for v in m.vec()) < 1e-3


# stability eigenvalues

@pytest.mark.parametrize("g", [0.0, 0.5, 12.0])
def test_xp_eigenvalues_closed_form(g):
    lam = stability_eigenvalues(FeedbackLaw.kalman_xp(g), MID)
    base = -(2 * g + MID.gamma)
    want = sorted([base, base + 2j, base - 2j], key=lambda z: (z.real, z.imag))
    got = sorted(lam, key=lambda z: (z.real, z.imag))
    assert np.allclose(got, want, atol=1e-12)


@given(params_st, st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.sampled_from(SCHEMES))
def test_eigenvalues_match_dense_solver(p, a_x, a_p, b_x, b_p, scheme):
    law = FeedbackLaw(Estimator.KALMAN_XP, a_x=a_x, a_p=a_p, b_x=b_x, b_p=b_p)
    dense = np.linalg.eigvals(lyapunov_operator(estimate_drift(law, p, scheme)))
    got = stability_eigenvalues(law, p, scheme)
    key = lambda z: (round(z.real, 6), round(z.imag, 6))
    assert np.allclose(sorted(got, key=key), sorted(dense, key=key), atol=1e-10 * (1 + np.max(np.abs(dense))))


# operating point

def test_operating_point_is_steady_and_shares_cov_c():
    p = default_params()
    cov_c = steady_sigma_c(p, Scheme.QND_POSITION)
    a = operating_point(p, Scheme.QND_POSITION, FeedbackLaw.kalman_xp(3.0))
    b = operating_point(p, Scheme.QND_POSITION, FeedbackLaw.kalman_xp(3.0), cov_c=cov_c)
    assert a.cov_c == cov_c and a.cov_m == b.cov_m
    assert a.residual < 1e-10
    assert steady_sigma_c(p, Scheme.QND_POSITION) == cov_c


def test_sym_round_trip():
    m = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert np.array_equal(sym_mat(sym_vec(m)), m)
