"""Synthetic time series: coloured noise, closed-loop runs and ring-downs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, signal

from .physcore import CONSTANTS, TWO_PI, VISCOUS, OscillatorParams, PhysicalConstants
from .records import TimeSeries
from . import response as rsp

FREQUENCY_DOMAIN = "frequency_domain"
TIME_DOMAIN = "time_domain"


def default_actuator_clamp(lever_arm: float, power: float = 2e-3,
                           const: PhysicalConstants = CONSTANTS) -> float:
    """Radiation-pressure torque 2 P arm / c of a reflected push beam (N m)."""
    return 2.0 * power * lever_arm / const.c


@dataclass(frozen=True)
class SimPlan:
    duration: float
    rate: float
    seed: int
    actuator_torque_max: float = default_actuator_clamp(1e-3)
    mode: str = FREQUENCY_DOMAIN

    def __post_init__(self):
        if not self.duration > 0 or not self.rate > 0:
            raise ValueError("duration and rate must be positive")
        n = self.duration * self.rate
        if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 4:
            raise ValueError("duration*rate must be an integer sample count >= 4")
        if not self.actuator_torque_max > 0:
            raise ValueError("actuator clamp must be > 0")
        if self.mode not in (FREQUENCY_DOMAIN, TIME_DOMAIN):
            raise ValueError(f"unknown simulation mode {self.mode!r}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))


def _white_bins(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    """rfft bins whose shaping by sqrt(S) yields a series of one-sided PSD S.

    DC and (for even n) Nyquist bins are zero.
    """
    m = n // 2 + 1
    z = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * math.sqrt(rate * n / 4.0)
    z[0] = 0.0
    if n % 2 == 0:
        z[-1] = 0.0
    return z


def _psd_on_grid(psd: Callable, freqs: np.ndarray) -> np.ndarray:
    s = np.zeros_like(freqs)
    s[1:] = np.broadcast_to(np.asarray(psd(freqs[1:]), dtype=float), freqs[1:].shape)
    if not np.all(np.isfinite(s[1:])):
        raise ValueError("target PSD must be finite on (0, rate/2]")
    if np.any(s < 0):
        raise ValueError("target PSD must be non-negative")
    return s


def synth_colored_noise(psd: Callable, plan: SimPlan, label: str = "noise",
                        unit: str = "rad") -> TimeSeries:
    """Gaussian series whose expected one-sided PSD equals ``psd(f)``.

    Complex Gaussian bins are scaled by sqrt(S) and inverse transformed, so
    the result is periodic over the plan duration.
    """
    n = plan.n_samples
    freqs = np.fft.rfftfreq(n, 1.0 / plan.rate)
    s = _psd_on_grid(psd, freqs)
    rng = np.random.default_rng(plan.seed)
    x = np.fft.irfft(np.sqrt(s) * _white_bins(rng, n, plan.rate), n=n)
    return TimeSeries(plan.rate, x, plan.seed, label, unit)


@dataclass(frozen=True)
class ClosedLoopRun:
    theta: TimeSeries
    torque: TimeSeries
    saturation_fraction: float
    flagged: bool


def _noise_streams(seed: int, k: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def simulate_closed_loop(params: OscillatorParams, filt: rsp.LoopFilter, damping=None,
                         budget: rsp.NoiseBudget = rsp.NoiseBudget(), plan: SimPlan | None = None,
                         drive_torque_psd: float = 0.0,
                         const: PhysicalConstants = CONSTANTS) -> ClosedLoopRun:
    """Closed-loop angle and feedback-torque series.

    Thermal, vibration (plus radiation-pressure and optional white drive)
    torques and detection noise are drawn independently. In frequency-domain
    mode they are shaped by chi_eff and the imprecision transfer; in
    time-domain mode a discretised loop with viscous mechanics is stepped.
    """
    if plan is None:
        raise ValueError("a SimPlan is required")
    if plan.mode == TIME_DOMAIN:
        return _simulate_time_domain(params, filt, damping, budget, plan, drive_torque_psd, const)
    n = plan.n_samples
    freqs = np.fft.rfftfreq(n, 1.0 / plan.rate)
    r_th, r_pas, r_det = _noise_streams(plan.seed, 3)
    s_th = _psd_on_grid(lambda f: rsp.thermal_torque_psd(f, params, damping, const), freqs)
    s_pas = np.full_like(freqs, budget.vibration_white_torque + budget.radiation_pressure_torque
                         + drive_torque_psd)
    s_det = _psd_on_grid(budget.detection_psd, freqs)
    tau = (np.sqrt(s_th) * _white_bins(r_th, n, plan.rate)
           + np.sqrt(s_pas) * _white_bins(r_pas, n, plan.rate))
    det = np.sqrt(s_det) * _white_bins(r_det, n, plan.rate)
    fpos = freqs.copy()
    fpos[0] = freqs[1]
    ce = rsp.chi_eff(fpos, filt, params, damping)
    G = rsp.loop_filter_G(fpos, filt, params)
    ce[0] = 0.0
    theta_k = ce * tau - G * ce * det
    act_k = G * (theta_k + det)
    act_k[0] = 0.0
    theta = np.fft.irfft(theta_k, n=n)
    act = np.fft.irfft(act_k, n=n)
    sat = float(np.mean(np.abs(act) > plan.actuator_torque_max))
    meta = {"mode": plan.mode}
    return ClosedLoopRun(TimeSeries(plan.rate, theta, plan.seed, "theta", "rad", meta),
                         TimeSeries(plan.rate, act, plan.seed, "feedback_torque", "N m", meta),
                         sat, sat > 0.01)


def _discrete_loop(params, filt, gamma_v, dt):
    """Closed-loop discrete state space with inputs [torque/I, detection] and outputs [theta, u/I]."""
    w0 = params.omega0
    Am = np.array([[0.0, 1.0], [-w0**2, -gamma_v]])
    Bm = np.array([[0.0], [1.0]])
    Ad, Bd, *_ = signal.cont2discrete((Am, Bm, np.eye(2), np.zeros((2, 1))), dt, method="zoh")
    K = filt.g * w0**2
    num = K * np.array([1.0 / filt.omega_lead, 1.0])
    den = np.array([1.0 / filt.omega_lag, 1.0]) if filt.exact else np.array([0.0, 1.0])
    if filt.exact:
        nd, dd = signal.bilinear(num, den, fs=1.0 / dt)
    else:
        # Lead-only filter is improper; use a backward-difference derivative.
        nd = np.array([K * (1 + 1 / (filt.omega_lead * dt)), -K / (filt.omega_lead * dt)])
        dd = np.array([1.0, 0.0])
    nd, dd = np.atleast_1d(nd) / dd[0], np.atleast_1d(dd) / dd[0]
    # first-order section: u_n = b0 e_n + q_n ; q_{n+1} = (b1 - a1 b0) e_n - a1 q_n
    b0, b1 = nd[0], nd[1]
    a1 = dd[1]
    return Ad, Bd.ravel(), b0, b1, a1


def _simulate_time_domain(params, filt, damping, budget, plan, drive_torque_psd, const):
    d = rsp._damping(params, damping)
    w_ref = filt.omega_eff(params) if filt.g > 0 else params.omega0
    gamma_v = float(d.rate(w_ref))
    visc = params.with_damping(VISCOUS)
    n = plan.n_samples
    dt = 1.0 / plan.rate
    r_th, r_pas, r_det = _noise_streams(plan.seed, 3)
    s_th = 4.0 * const.k_B * params.T0 * params.inertia * gamma_v
    s_pas = budget.vibration_white_torque + budget.radiation_pressure_torque + drive_torque_psd
    freqs = np.fft.rfftfreq(n, dt)
    tau = np.fft.irfft(math.sqrt(s_th) * _white_bins(r_th, n, plan.rate)
                       + math.sqrt(s_pas) * _white_bins(r_pas, n, plan.rate), n=n)
    det = np.fft.irfft(np.sqrt(_psd_on_grid(budget.detection_psd, freqs))
                       * _white_bins(r_det, n, plan.rate), n=n)
    Ad, Bd, b0, b1, a1 = _discrete_loop(visc, filt, gamma_v, dt)
    inertia = params.inertia
    clamp = plan.actuator_torque_max / inertia
    acc = tau / inertia

    theta, u = _run_linear(Ad, Bd, b0, b1, a1, acc, det)
    if np.any(np.abs(u) > clamp):
        theta, u, nsat = _run_clamped(Ad, Bd, b0, b1, a1, acc, det, clamp)
        sat = nsat / n
    else:
        sat = 0.0
    meta = {"mode": plan.mode, "gamma_viscous": gamma_v}
    return ClosedLoopRun(TimeSeries(plan.rate, theta, plan.seed, "theta", "rad", meta),
                         TimeSeries(plan.rate, u * inertia, plan.seed, "feedback_torque", "N m", meta),
                         float(sat), sat > 0.01)


def _closed_loop_matrices(Ad, Bd, b0, b1, a1):
    c = np.array([1.0, 0.0])
    A = np.zeros((3, 3))
    A[:2, :2] = Ad - b0 * np.outer(Bd, c)
    A[:2, 2] = -Bd
    A[2, :2] = (b1 - a1 * b0) * c
    A[2, 2] = -a1
    B = np.zeros((3, 2))
    B[:2, 0] = Bd
    B[:2, 1] = -b0 * Bd
    B[2, 1] = b1 - a1 * b0
    C = np.array([[1.0, 0.0, 0.0], [b0, 0.0, 1.0]])
    D = np.array([[0.0, 0.0], [0.0, b0]])
    return A, B, C, D


def _run_linear(Ad, Bd, b0, b1, a1, acc, det):
    A, B, C, D = _closed_loop_matrices(Ad, Bd, b0, b1, a1)
    # modal recursion avoids ill-conditioned transfer-function polynomials
    lam, V = np.linalg.eig(A)
    drive = np.linalg.solve(V, B) @ np.vstack((acc, det))
    z = np.vstack([signal.lfilter([0.0, 1.0], [1.0, -lk], drive[k]) for k, lk in enumerate(lam)])
    y = (C @ V @ z).real + D @ np.vstack((acc, det))
    return y[0], y[1]


def _run_clamped(Ad, Bd, b0, b1, a1, acc, det, clamp):
    n = acc.size
    theta = np.empty(n)
    u_out = np.empty(n)
    a00, a01, a10, a11 = Ad[0, 0], Ad[0, 1], Ad[1, 0], Ad[1, 1]
    bd0, bd1 = Bd
    x0 = x1 = q = 0.0
    c1 = b1 - a1 * b0
    nsat = 0
    for i in range(n):
        e = x0 + det[i]
        u = b0 * e + q
        q = c1 * e - a1 * q
        if u > clamp:
            u = clamp
            nsat += 1
        elif u < -clamp:
            u = -clamp
            nsat += 1
        theta[i] = x0
        u_out[i] = u
        f = acc[i] - u
        x0, x1 = a00 * x0 + a01 * x1 + bd0 * f, a10 * x0 + a11 * x1 + bd1 * f
    return theta, u_out, nsat


@dataclass(frozen=True)
class RingdownResult:
    theta: TimeSeries
    amplitude: np.ndarray
    tau: float
    Q: float
    late_rms: float | None


def _oscillator_discretisation(omega0, gamma, dt, diffusion):
    A = np.array([[0.0, 1.0], [-omega0**2, -gamma]])
    # Van Loan: process-noise covariance of the exactly discretised SDE.
    Qc = np.array([[0.0, 0.0], [0.0, diffusion]])
    M = np.zeros((4, 4))
    M[:2, :2] = -A
    M[:2, 2:] = Qc
    M[2:, 2:] = A.T
    E = linalg.expm(M * dt)
    Phi = E[2:, 2:].T
    Qd = Phi @ E[:2, 2:]
    return Phi, 0.5 * (Qd + Qd.T)


def ringdown(params: OscillatorParams, theta0: float, duration: float, rate: float = 20.0,
             thermal: bool = False, seed: int = 0, late_after: float | None = None,
             const: PhysicalConstants = CONSTANTS) -> RingdownResult:
    """Free decay of the bare mode from rest at angle ``theta0``.

    Integration is the exact discretisation of the viscous oscillator at
    gamma0 (both damping laws coincide at resonance), so any sample rate
    gives exact snapshots. tau is fitted to the log of the phase-space
    amplitude sqrt(theta^2 + (theta_dot/omega0)^2) while it stays above ten
    times the equipartition level.
    """
    w0, g0 = params.omega0, params.gamma0
    n = int(round(duration * rate))
    if n < 4:
        raise ValueError("ring-down needs at least 4 samples")
    dt = 1.0 / rate
    diffusion = 2.0 * const.k_B * params.T0 * g0 / params.inertia if thermal else 0.0
    Phi, Qd = _oscillator_discretisation(w0, g0, dt, diffusion)
    lam, V = np.linalg.eig(Phi)
    Vinv = np.linalg.inv(V)
    y0 = Vinv @ np.array([theta0, 0.0])
    if thermal:
        rng = np.random.default_rng(seed)
        Lc = np.linalg.cholesky(Qd + 1e-300 * np.eye(2)) if Qd[0, 0] > 0 else np.sqrt(np.abs(Qd))
        w = Lc @ rng.standard_normal((2, n - 1))
        drive = Vinv @ w
    else:
        drive = np.zeros((2, n - 1), dtype=complex)
    ys = []
    for k in range(2):
        u = np.concatenate(([y0[k]], drive[k]))
        ys.append(signal.lfilter([1.0], [1.0, -lam[k]], u))
    x = (V @ np.vstack(ys)).real
    theta = x[0]
    amp = np.sqrt(x[0] ** 2 + (x[1] / w0) ** 2)
    t = np.arange(n) * dt
    floor = 10.0 * math.sqrt(const.k_B * params.T0 / (params.inertia * w0**2)) if thermal else 0.0
    m = amp > floor
    if thermal:
        first_below = np.argmax(~m) if np.any(~m) else n
        m = np.zeros(n, bool)
        m[:first_below] = True
    if m.sum() < 3:
        raise ValueError("amplitude never exceeds the thermal floor; nothing to fit")
    slope = np.polyfit(t[m], np.log(amp[m]), 1)[0]
    tau = -1.0 / slope
    late_rms = None
    if thermal:
        t_late = 5.0 * tau if late_after is None else late_after
        late = t >= t_late
        if late.sum() >= 2:
            late_rms = float(np.sqrt(np.mean(theta[late] ** 2)))
    ts = TimeSeries(rate, theta, seed, "ringdown", "rad")
    return RingdownResult(ts, amp, tau, tau * w0 / 2.0, late_rms)
