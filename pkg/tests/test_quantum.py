import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtorsion import quantum as qm
from mgtorsion.physcore import CONSTANTS, TWO_PI, derive_all, zero_point_angle

HBAR = CONSTANTS.hbar
I = 3.3e-13
W18 = TWO_PI * 18.0


def _thermal(n, zp=1e-12, m=1.0):
    return qm.GaussianState.thermal(zp, n, m)


# -- states

def test_state_invariants():
    with pytest.raises(ValueError):
        qm.GaussianState(-1.0, 1.0)
    with pytest.raises(ValueError):
        qm.GaussianState(1e-40, 1e-40)
    with pytest.raises(ValueError):
        qm.GaussianState(1.0, 1.0, frame="polar")


def test_rates_invariants():
    with pytest.raises(ValueError):
        qm.DiffusionRates(-1.0, 0, 0, 1, 1, 1)
    with pytest.raises(ValueError):
        qm.DiffusionRates(1.0, 0, 0, 1, 0, 1)


# -- thermal coherence

def test_ground_state():
    xi, dx = qm.thermal_coherence(2e-15, 0.0)
    assert xi == dx == 2e-15


def test_pendulum_thermal_coherence_angle(params):
    d = derive_all(params, params.f0)
    assert d.theta_zp == pytest.approx(1.95e-12, rel=0.01)
    xi, _ = qm.thermal_coherence(d.theta_zp, d.n_th)
    assert xi == pytest.approx(1.4e-18, rel=0.05)


@given(n=st.floats(0.0, 1e15), zp=st.floats(1e-20, 1e-6))
def test_thermal_product_invariant(n, zp):
    xi, dx = qm.thermal_coherence(zp, n)
    assert xi * dx == pytest.approx(zp * zp, rel=1e-12)
    assert xi <= dx


def test_thermal_rejects_negative_occupation():
    with pytest.raises(ValueError):
        qm.thermal_coherence(1.0, -1.0)


# -- feedback coherence

def test_no_imprinted_noise_gives_unit_suppression():
    xi, s = qm.feedback_coherence_angle(1.2e-12, 2.8e5, 0.58, 0.0)
    assert s == 1.0
    assert xi == pytest.approx(1.2e-12 / math.sqrt(2 * 2.8e5 + 1), rel=1e-15)


def test_strongest_damping_coherence_values():
    xi, s = qm.feedback_coherence_angle(1.2e-12, 2.8e5, 0.58, 0.085)
    assert xi == pytest.approx(1.2e-15, rel=0.25)
    assert xi * 1e-3 == pytest.approx(1.2e-18, rel=0.25)
    assert 0.8 <= s <= 1.0


def test_twenty_percent_suppression_at_critical_damping():
    # s = 0.8 at Q = 0.5 needs fb_fraction = Q^2 (1/s^2 - 1)
    frac = 0.25 * (1 / 0.64 - 1)
    assert frac == pytest.approx(0.140625)
    _, s = qm.feedback_coherence_angle(1e-12, 10.0, 0.5, frac)
    assert s == pytest.approx(0.8, rel=1e-12)


@given(q=st.floats(1e-3, 1e6), frac=st.floats(0.0, 1.0))
def test_suppression_bounded(q, frac):
    s = qm.suppression_factor(q, frac)
    assert 0 < s <= 1


def test_suppression_tends_to_one():
    assert qm.suppression_factor(1e8, 1.0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        qm.suppression_factor(0.0, 0.1)
    with pytest.raises(ValueError):
        qm.suppression_factor(1.0, 1.5)


def test_feedback_diffusion_relation():
    d = qm.feedback_diffusion(2.0, 3.0)
    assert d == pytest.approx(HBAR**2 * 9.0 / 32.0)
    assert qm.feedback_diffusion(2.0, 3.0, 0.5) == pytest.approx(2 * d)
    with pytest.raises(ValueError):
        qm.feedback_diffusion(0.0, 1.0)


# -- moment equations

def _rates(n_th=1e4, zp=1e-12, m=1.0, q0=1e3, q_eff=0.58, d_fb=0.0):
    omega = HBAR / (2 * m * zp**2)
    g0 = omega / q0
    return qm.DiffusionRates(qm.thermal_diffusion(zp, n_th, g0), 0.0, d_fb, omega / q_eff, omega, m), g0


def test_feedback_steady_state_first_term():
    rates, g0 = _rates()
    st_ = qm.steady_state_moments(rates)
    zp = 1e-12
    assert st_.Vxx == pytest.approx(zp**2 * (g0 / rates.gamma_eff) * (2 * 1e4 + 1), rel=1e-12)


def test_bath_steady_state_is_thermal():
    zp, n, m = 1e-12, 50.0, 1.0
    omega = HBAR / (2 * m * zp**2)
    g = omega / 100.0
    rates = qm.DiffusionRates(qm.thermal_diffusion(zp, n, g), 0.0, 0.0, g, omega, m)
    s = qm.steady_state_moments(rates, bath=True)
    ref = qm.GaussianState.thermal(zp, n, m)
    assert s.Vxx == pytest.approx(ref.Vxx, rel=1e-12)
    assert s.Vpp == pytest.approx(ref.Vpp, rel=1e-12)
    assert s.Vxp == 0.0
    with pytest.raises(ValueError):
        qm.steady_state_moments(qm.DiffusionRates(1.0, 0, 1.0, g, omega, m), bath=True)


def test_steady_state_requires_damping():
    with pytest.raises(ValueError):
        qm.steady_state_moments(qm.DiffusionRates(1.0, 0, 0, 0.0, 1.0, 1.0))


@pytest.mark.parametrize("bath", [False, True])
def test_integration_converges_to_steady_state(bath):
    rates, _ = _rates(q_eff=2.0, d_fb=0.0 if bath else 1e-30)
    ss = qm.steady_state_moments(rates, bath)
    start = qm.GaussianState(3 * ss.Vxx, 0.5 * ss.Vpp, 0.0)
    end = qm.integrate_moments(rates, start, 30.0 / rates.gamma_eff, bath)
    for a, b in ((end.Vxx, ss.Vxx), (end.Vpp, ss.Vpp)):
        assert a == pytest.approx(b, rel=1e-10)
    assert abs(end.Vxp - ss.Vxp) <= 1e-10 * math.sqrt(ss.Vxx * ss.Vpp)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 10.0), b=st.floats(0.1, 10.0))
def test_steady_state_superposition(a, b):
    rates, _ = _rates(d_fb=1e-26)
    base_x = qm.DiffusionRates(rates.D_th, 0, 0, rates.gamma_eff, rates.Omega, 1.0)
    base_f = qm.DiffusionRates(1e-300, 0, rates.D_fb, rates.gamma_eff, rates.Omega, 1.0)
    mixed = qm.DiffusionRates(a * rates.D_th, 0, b * rates.D_fb, rates.gamma_eff, rates.Omega, 1.0)
    sx, sf, sm = (qm.steady_state_moments(r) for r in (base_x, base_f, mixed))
    assert sm.Vxx == pytest.approx(a * sx.Vxx + b * sf.Vxx, rel=1e-10)
    assert sm.Vpp == pytest.approx(a * sx.Vpp + b * sf.Vpp, rel=1e-10)


def test_moment_solution_matches_closed_form_at_strongest_damping():
    th_zp = zero_point_angle(I, W18)
    n, q, frac = 2.755e5, 0.58, 0.085
    rates = qm.rates_from_experiment(th_zp, n, q, frac, W18, I)
    xi_m, _ = qm.coherence_from_covariance(qm.steady_state_moments(rates, frame=qm.ANGULAR))
    xi_c, _ = qm.feedback_coherence_angle(th_zp, n, q, frac)
    assert xi_m == pytest.approx(xi_c, rel=0.01)


# -- coherence from covariance and the quadrature oracle

@given(n=st.floats(0.0, 1e6))
def test_covariance_formula_on_thermal_states(n):
    zp = 3e-13
    xi, dx = qm.coherence_from_covariance(qm.GaussianState.thermal(zp, n, 2.0))
    ref_xi, ref_dx = qm.thermal_coherence(zp, n)
    assert xi == pytest.approx(ref_xi, rel=1e-12)
    assert dx == pytest.approx(ref_dx, rel=1e-12)


def test_pure_state_limit():
    vxx = 4e-30
    s = qm.GaussianState(vxx, (HBAR / 2) ** 2 / vxx)
    xi, dx = qm.coherence_from_covariance(s)
    assert xi == pytest.approx(dx, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(vxx=st.floats(1e-30, 1e-20), excess=st.floats(1.0, 1e4), c=st.floats(-0.9, 0.9))
def test_xi_never_exceeds_spread(vxx, excess, c):
    vpp = excess * (HBAR / 2) ** 2 / vxx / (1 - c * c)
    vxp = c * math.sqrt(vxx * vpp)
    xi, dx = qm.coherence_from_covariance(qm.GaussianState(vxx, vpp, vxp))
    assert xi <= dx * (1 + 1e-12)


@pytest.mark.parametrize("n", [0.0, 10.0])
def test_numerical_oracle_thermal(n):
    zp = 1e-12
    s = _thermal(n, zp)
    assert qm.coherence_numerical_oracle(s) == pytest.approx(zp / math.sqrt(2 * n + 1), rel=1e-3)


def test_numerical_oracle_squeezed_correlated_state():
    vxx = 1e-24
    vpp = 5 * (HBAR / 2) ** 2 / vxx
    s = qm.GaussianState(vxx, vpp, 0.6 * math.sqrt(vxx * vpp))
    assert qm.coherence_numerical_oracle(s) == pytest.approx(qm.coherence_from_covariance(s)[0], rel=1e-3)


def test_numerical_oracle_convergence():
    s = _thermal(10.0)
    exact = qm.coherence_from_covariance(s)[0]
    # coarse grids expose the trapezoid error; refining must cut it at least 4x
    e1 = abs(qm.coherence_numerical_oracle(s, 8.0, 256) - exact)
    e2 = abs(qm.coherence_numerical_oracle(s, 8.0, 512) - exact)
    assert e2 <= e1 / 4 or e2 < 1e-14 * exact


def test_numerical_oracle_refuses_unresolved_state():
    s = _thermal(100.0)
    with pytest.raises(ValueError):
        qm.coherence_numerical_oracle(s)
    exact = qm.coherence_from_covariance(s)[0]
    assert qm.coherence_numerical_oracle(s, 10.0, 4096) == pytest.approx(exact, rel=1e-3)


def test_numerical_oracle_preconditions():
    with pytest.raises(ValueError):
        qm.coherence_numerical_oracle(_thermal(1.0), 5.0, 512)
    with pytest.raises(ValueError):
        qm.coherence_numerical_oracle(_thermal(1.0), 10.0, 128)
