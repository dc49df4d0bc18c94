import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtorsion import quantum as qm
from mgtorsion import response as rsp
from mgtorsion import specan as sa
from mgtorsion import timesim as ts
from mgtorsion.physcore import CONSTANTS, TWO_PI, OscillatorParams, zero_point_angle
from mgtorsion.records import SpectrumRecord, TimeSeries

LADDER = (25.0, 10.0, 4.0, 1.5, 0.58)


def _white(seed, duration=600.0, rate=256.0, s0=1.0):
    return ts.synth_colored_noise(lambda f: np.full_like(f, s0), ts.SimPlan(duration, rate, seed))


# -- Welch estimator

def test_welch_white_level_and_parseval():
    x = TimeSeries(1000.0, np.random.default_rng(0).standard_normal(200_000))
    rec = sa.welch_psd(x, 2.0)
    assert np.median(rec.psd) == pytest.approx(2e-3, rel=0.02)
    assert np.sum(rec.psd) * rec.df == pytest.approx(x.samples.var(), rel=0.01)


def test_welch_tone_power():
    rate, a = 256.0, 3e-3
    t = np.arange(int(600 * rate)) / rate
    x = TimeSeries(rate, a * np.sin(TWO_PI * 17.3 * t))
    assert sa.band_power(sa.welch_psd(x, 10.0), 16.0, 19.0) == pytest.approx(a * a / 2, rel=0.01)


def test_welch_unbiased_over_seeds():
    acc = None
    for seed in range(100):
        rec = sa.welch_psd(_white(seed), 1.0).band(8.0, 28.0)
        acc = rec.psd if acc is None else acc + rec.psd
    assert np.max(np.abs(acc / 100 - 1.0)) < 0.02


def test_welch_input_checks():
    x = TimeSeries(100.0, np.zeros(50))
    with pytest.raises(ValueError):
        sa.welch_psd(x, 0.1)
    with pytest.raises(ValueError):
        sa.welch_psd(x, 1.0)
    with pytest.raises(ValueError):
        sa.welch_psd(TimeSeries(100.0, np.zeros(500)), 1.0, overlap=1.0)


def test_dof_and_log_moments():
    assert sa.equivalent_dof(1) == 2.0
    nu = sa.equivalent_dof(100)
    assert 180 < nu < 200
    assert sa.log_bias(100) == pytest.approx(-1.0 / nu, rel=0.05)
    assert sa.log_variance(100) == pytest.approx(2.0 / nu, rel=0.05)


# -- band integrals and temperature

def test_band_integral_lorentzian():
    fc, hw = 10.0, 1e-6
    val = sa.band_integral(lambda f: hw / math.pi / ((f - fc) ** 2 + hw * hw), 1.0, 20.0, [(fc, hw)])
    assert val == pytest.approx(1.0, rel=1e-6)


def test_temperature_identity(params):
    T = sa.effective_temperature(lambda f: sa.apparent_angle_psd(f, 18.0, params), params, 18.0)
    assert T.T_eff == pytest.approx(params.T0, rel=1e-9)
    assert T.n == pytest.approx(CONSTANTS.k_B * params.T0 / (CONSTANTS.hbar * TWO_PI * 18.0), rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(1e-3, 1e3))
def test_temperature_scale_invariance(params, k):
    f = np.arange(0.1, 128.0, 0.1)
    rec = SpectrumRecord(f, rsp.closed_loop_angle_psd(f, rsp.design_filter(params, 18, 0.58), params).total)
    T1 = sa.effective_temperature(rec, params, 18.0).T_eff
    T2 = sa.effective_temperature(rec.scaled(k * k), params, 18.0).T_eff
    assert T2 == pytest.approx(k * k * T1, rel=1e-13)


def test_temperature_band_outside_grid(params):
    rec = SpectrumRecord(np.arange(10.0, 20.0, 0.1), np.ones(100))
    with pytest.raises(ValueError):
        sa.effective_temperature(rec, params, 18.0)


def test_equipartition_capture_is_lorentzian_fraction(params):
    # a band of ten full widths holds (2/pi) atan(10) of a Lorentzian line
    cap = sa.equipartition_capture(params, 18.0)
    assert cap == pytest.approx(2 / math.pi * math.atan(10.0), rel=1e-4)
    assert sa.equipartition_capture(params, 18.0, 2000.0) == pytest.approx(1.0, abs=1e-3)


def test_synthetic_temperature_of_critical_run(params, critical_filter, budget):
    run = ts.simulate_closed_loop(params, critical_filter, None, budget, ts.SimPlan(600.0, 256.0, 99))
    T = sa.effective_temperature(sa.welch_psd(run.theta, 10.0), params, 18.0)
    assert 202e-6 <= T.T_eff <= 274e-6


# -- susceptibility fit

def _noiseless(params, q, drive=1e-30):
    filt = rsp.design_filter(params, 18.0, q).lead_only()
    f = np.arange(0.1, 128.0, 0.1)
    return filt, SpectrumRecord(f, np.abs(rsp.chi_eff(f, filt, params)) ** 2 * drive)


def test_susceptibility_noiseless_round_trip(viscous):
    _, rec = _noiseless(viscous, 10.0)
    r = sa.fit_susceptibility(rec, 1e-30, viscous, 8.0, 28.0)
    assert float(f"{r.f_eff:.4g}") == 18.00
    assert float(f"{r.Q_eff:.4g}") == 10.00
    assert r.confidence["f_eff"][0] <= r.f_eff <= r.confidence["f_eff"][1]


def test_susceptibility_noisy_recovery(params):
    filt, _ = _noiseless(params, 10.0)
    drive = 100 * float(rsp.thermal_torque_psd(18.0, params))
    model = lambda f: np.abs(rsp.chi_eff(f, filt, params)) ** 2 * drive
    for seed in range(20):
        x = ts.synth_colored_noise(model, ts.SimPlan(600.0, 256.0, seed))
        r = sa.fit_susceptibility(sa.welch_psd(x, 10.0), drive, params, 8.0, 28.0)
        assert r.f_eff == pytest.approx(18.0, rel=0.005)
        assert r.Q_eff == pytest.approx(10.0, rel=0.05)


@pytest.mark.parametrize("q", LADDER)
def test_ladder_recovered_within_confidence(params, budget, q):
    filt, rec = _noiseless(params, q)
    drive = 100 * float(rsp.thermal_torque_psd(18.0, params))
    truth = sa.fit_susceptibility(rec, 1e-30, params, 8.0, 28.0)
    background = lambda f: rsp.closed_loop_angle_psd(f, filt, params, None, budget).total
    n, hits = 40, 0
    for seed in range(n):
        run = ts.simulate_closed_loop(params, filt, None, budget, ts.SimPlan(600.0, 256.0, seed), drive)
        r = sa.fit_susceptibility(sa.welch_psd(run.theta, 10.0), drive, params, 8.0, 28.0, background)
        lo_f, hi_f = r.confidence["f_eff"]
        lo_q, hi_q = r.confidence["Q_eff"]
        hits += (lo_f <= truth.f_eff <= hi_f) and (lo_q <= truth.Q_eff <= hi_q)
    # two 95% intervals give >= 90% joint coverage; allow 3 binomial sigmas
    assert hits / n >= 0.9 - 3 * math.sqrt(0.09 / n)


@settings(max_examples=15, deadline=None)
@given(k=st.floats(1e-6, 1e6))
def test_susceptibility_rescaling_invariance(viscous, k):
    _, rec = _noiseless(viscous, 4.0)
    a = sa.fit_susceptibility(rec, 1e-30, viscous, 8.0, 28.0)
    b = sa.fit_susceptibility(rec.scaled(k), 1e-30 * k, viscous, 8.0, 28.0)
    assert b.f_eff == pytest.approx(a.f_eff, rel=1e-7)
    assert b.Q_eff == pytest.approx(a.Q_eff, rel=1e-7)


def test_susceptibility_errors(params):
    f = np.arange(8.0, 28.0, 0.1)
    with pytest.raises(ValueError):
        sa.fit_susceptibility(SpectrumRecord(f, np.ones_like(f)), 0.0, params)
    # a resonance below the band cannot be placed inside it
    low = OscillatorParams(f0=3.0, Q0=2.0, damping_law="viscous")
    spec = SpectrumRecord(f, np.abs(rsp.chi_mech(f, low)) ** 2 * 1e-30)
    with pytest.raises(sa.FitError) as err:
        sa.fit_susceptibility(spec, 1e-30, params, 8.0, 28.0)
    assert err.value.diagnostics


# -- noise-budget fit

def _budget_fit(params, budget, seed, q=0.58):
    filt = rsp.design_filter(params, 18.0, q)
    run = ts.simulate_closed_loop(params, filt, None, budget, ts.SimPlan(600.0, 256.0, seed))
    return sa.fit_noise_budget(sa.welch_psd(run.theta, 10.0), filt, params, None, budget)


def test_noise_budget_coverage(params, budget):
    hits = 0
    for seed in range(50):
        lo, hi = _budget_fit(params, budget, 1000 + seed).confidence["vibration_white_torque"]
        hits += lo <= budget.vibration_white_torque <= hi
    assert hits >= 45


def test_noise_budget_null_case(params, budget):
    b0 = budget.scaled(vibration_white_torque=0.0)
    lo, hi = _budget_fit(params, b0, 2000).confidence["vibration_white_torque"]
    assert lo <= 0.0 <= hi


@pytest.mark.parametrize("q", LADDER)
def test_noise_budget_goodness_of_fit(params, budget, q):
    r = _budget_fit(params, budget, 7, q)
    assert 0 <= r.residual < 2.0
    lo, hi = r.confidence["vibration_white_torque"]
    assert lo <= r.vibration_white_torque <= hi
    d = r.to_dict()
    assert d["parameters"]["vibration_white_torque"]["ci95"] == [lo, hi]


# -- feedback noise fraction

def test_fraction_zero_without_detection_noise(params, critical_filter):
    assert sa.fb_noise_fraction(critical_filter, params, None, rsp.NoiseBudget(0, 0, 3e-37)) == 0.0


def test_fraction_at_strongest_damping_keeps_suppression_within_20pct(params, critical_filter, budget):
    frac = sa.fb_noise_fraction(critical_filter, params, None, budget)
    s = qm.suppression_factor(0.58, frac)
    assert 0.8 <= s <= 1.0


def test_fraction_monotone_in_imprinted_level(params, critical_filter, budget):
    a = sa.fb_noise_fraction(critical_filter, params, None, budget)
    b = sa.fb_noise_fraction(critical_filter, params, None, budget.scaled(detection_white=2.0))
    assert b > a


@settings(max_examples=20, deadline=None)
@given(det=st.floats(0.0, 1e-17), vib=st.floats(0.0, 1e-34), q=st.sampled_from(LADDER))
def test_fraction_bounded(params, det, vib, q):
    filt = rsp.design_filter(params, 18.0, q)
    frac = sa.fb_noise_fraction(filt, params, None, rsp.NoiseBudget(det, 3.0, vib))
    assert 0.0 <= frac <= 1.0
