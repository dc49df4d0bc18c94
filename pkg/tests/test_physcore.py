import math

import pytest
from hypothesis import given, strategies as st

from mgtorsion.physcore import (CONSTANTS, TWO_PI, OscillatorParams, PhysicalConstants,
                                derive_all, equipartition_angle, thermal_occupation,
                                zero_point_angle)

pos = st.floats(1e-3, 1e3)


def test_constants_positive_and_rejects_nonpositive():
    assert all(v > 0 for v in (CONSTANTS.G, CONSTANTS.hbar, CONSTANTS.k_B, CONSTANTS.c))
    with pytest.raises(ValueError):
        PhysicalConstants(G=0.0)


@pytest.mark.parametrize("field,value", [("inertia", 0.0), ("f0", -1.0), ("Q0", 0.0),
                                         ("T0", -1.0), ("lever_arm", 0.0),
                                         ("damping_law", "coulomb")])
def test_oscillator_params_invariants(field, value):
    with pytest.raises(ValueError):
        OscillatorParams(**{field: value})


def test_gamma0_definition(params):
    assert params.gamma0 == pytest.approx(TWO_PI * 6.72 / 8.6e4, rel=1e-15)


def test_thermal_occupation_and_equipartition(params):
    d = derive_all(params, 6.72)
    # independent evaluation of the high-temperature occupation
    n = 1.38065e-23 * 295.0 / (1.05457e-34 * 2 * math.pi * 6.72)
    assert d.n_th == pytest.approx(n, rel=1e-14)
    assert d.n_th == pytest.approx(9.2e11, rel=0.02)
    assert d.equipartition_angle == pytest.approx(2.6e-6, rel=0.05)


def test_shifted_mode_values(params):
    d = derive_all(params, 18.0, 0.5)
    assert d.Q_app == pytest.approx(6.1e5, rel=0.02)
    assert d.gamma_app / TWO_PI == pytest.approx(29e-6, rel=0.05)
    assert d.theta_zp == pytest.approx(1.2e-12, rel=0.05)
    assert d.omega_lead_min / TWO_PI == pytest.approx(7.7, rel=0.02)
    assert d.x_zp == d.theta_zp * params.lever_arm
    assert d.g_gain == pytest.approx((18 / 6.72) ** 2 - 1, rel=1e-15)


def test_identity_point(params):
    d = derive_all(params, params.f0)
    assert d.g_gain == 0.0 and d.Q_app == params.Q0 and d.gamma_app == params.gamma0


def test_rejects_softening_and_bad_target(params):
    with pytest.raises(ValueError):
        derive_all(params, 5.0)
    with pytest.raises(ValueError):
        derive_all(params, 18.0, 0.0)


def test_deterministic(params):
    assert derive_all(params, 18.0) == derive_all(params, 18.0)


@given(f0=st.floats(0.1, 100.0), ratio=st.floats(1.0, 50.0), Q0=st.floats(1.0, 1e7))
def test_q_app_times_gamma_app_is_omega_eff(f0, ratio, Q0):
    p = OscillatorParams(f0=f0, Q0=Q0)
    d = derive_all(p, f0 * ratio)
    assert d.Q_app * d.gamma_app == pytest.approx(d.omega_eff, rel=1e-12)


@given(eps=st.floats(1e-12, 1e-3))
def test_gain_continuous_at_identity(params, eps):
    d = derive_all(params, params.f0 * (1 + eps))
    assert 0 <= d.g_gain <= 3 * eps


@given(inertia=pos, omega=pos)
def test_zero_point_angle_formula(inertia, omega):
    th = zero_point_angle(inertia, omega)
    assert 2 * inertia * omega * th**2 == pytest.approx(CONSTANTS.hbar, rel=1e-12)


def test_equipartition_angle_default_omega(params):
    assert equipartition_angle(params) == equipartition_angle(params, params.omega0)
    assert thermal_occupation(0.0, 1.0) == 0.0
