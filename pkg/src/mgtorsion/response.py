"""Frequency-domain models: susceptibilities, noise PSDs and the feedback loop.

Every function takes frequencies in Hz (scalars or arrays) and returns
one-sided PSDs normalised so that the integral over f in Hz is the variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physcore import (CONSTANTS, STRUCTURAL, TWO_PI, VISCOUS, OscillatorParams,
                       PhysicalConstants, lead_corner_min, thermal_occupation)
from .records import SpectrumRecord

DEFAULT_OMEGA_LAG = TWO_PI * 1.5e3


@dataclass(frozen=True)
class DampingModel:
    law: str
    gamma0: float
    omega0: float

    def __post_init__(self):
        if self.law not in (STRUCTURAL, VISCOUS):
            raise ValueError(f"unknown damping law {self.law!r}")

    @classmethod
    def of(cls, params: OscillatorParams, law: str | None = None) -> "DampingModel":
        return cls(law or params.damping_law, params.gamma0, params.omega0)

    def rate(self, omega):
        """Energy damping rate gamma(omega) in rad/s."""
        omega = np.asarray(omega, dtype=float)
        if self.law == VISCOUS:
            return np.full_like(omega, self.gamma0)
        if np.any(omega <= 0):
            raise ValueError("structural damping is undefined at f <= 0")
        return self.gamma0 * self.omega0 / omega


def _damping(params: OscillatorParams, damping) -> DampingModel:
    if damping is None:
        return DampingModel.of(params)
    if isinstance(damping, str):
        return DampingModel.of(params, damping)
    return damping


@dataclass(frozen=True)
class LoopFilter:
    """Lead-lag loop filter G = (g/chi(0)) (1 + i w/w_lead)/(1 + i w/w_lag)."""

    g: float
    omega_lead: float
    omega_lag: float = DEFAULT_OMEGA_LAG
    exact: bool = True

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("loop gain g must be >= 0")
        if not self.omega_lead > 0 or not self.omega_lag > 0:
            raise ValueError("filter corners must be positive")
        if self.exact and not self.omega_lead < self.omega_lag:
            raise ValueError("omega_lead must be below omega_lag for the exact filter")

    @classmethod
    def open_loop(cls) -> "LoopFilter":
        return cls(0.0, 1.0, DEFAULT_OMEGA_LAG, True)

    def lead_only(self) -> "LoopFilter":
        return LoopFilter(self.g, self.omega_lead, self.omega_lag, False)

    def omega_eff(self, params: OscillatorParams) -> float:
        return params.omega0 * math.sqrt(1.0 + self.g)

    def gamma_fb(self, params: OscillatorParams) -> float:
        """Feedback part omega0^2 g / omega_lead of the effective damping."""
        return params.omega0**2 * self.g / self.omega_lead


def design_filter(params: OscillatorParams, f_eff: float, Q_eff: float,
                  omega_lag: float = DEFAULT_OMEGA_LAG, exact: bool = True) -> LoopFilter:
    """Loop filter that shifts the mode to ``f_eff`` with quality factor ``Q_eff``.

    Uses the lead-only design rule; with ``exact=True`` the lag pole is kept
    in the transfer function but not compensated for.
    """
    if f_eff <= params.f0:
        raise ValueError("f_eff must exceed f0 for a feedback design")
    g = (f_eff / params.f0) ** 2 - 1.0
    return LoopFilter(g, lead_corner_min(params, f_eff, Q_eff), omega_lag, exact)


@dataclass(frozen=True)
class NoiseBudget:
    """Noise levels feeding the closed-loop model.

    ``detection_white`` (rad^2/Hz) with a 1/f rise below ``detection_pink_knee``
    (Hz): S_imp = white * (1 + knee/f).  Torque terms are in (N m)^2/Hz.
    ``parasitic_lines`` are (f_Hz, peak rad^2/Hz) Lorentzians of half-width
    ``line_width`` Hz added to the detection noise.
    """

    detection_white: float = 0.0
    detection_pink_knee: float = 0.0
    vibration_white_torque: float = 0.0
    radiation_pressure_torque: float = 0.0
    parasitic_lines: tuple = ()
    line_width: float = 0.02

    def __post_init__(self):
        for name in ("detection_white", "detection_pink_knee", "vibration_white_torque",
                     "radiation_pressure_torque"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lines = tuple((float(f), float(a)) for f, a in self.parasitic_lines)
        if any(f <= 0 or a < 0 for f, a in lines):
            raise ValueError("parasitic lines need f > 0 and amplitude >= 0")
        object.__setattr__(self, "parasitic_lines", lines)
        if not self.line_width > 0:
            raise ValueError("line_width must be > 0")

    def detection_psd(self, f):
        f = np.asarray(f, dtype=float)
        with np.errstate(divide="ignore"):
            s = self.detection_white * (1.0 + self.detection_pink_knee / f)
        for fl, amp in self.parasitic_lines:
            s = s + amp / (1.0 + ((f - fl) / self.line_width) ** 2)
        return s

    def scaled(self, **factors) -> "NoiseBudget":
        d = {k: getattr(self, k) * factors.get(k, 1.0)
             for k in ("detection_white", "vibration_white_torque", "radiation_pressure_torque")}
        return NoiseBudget(d["detection_white"], self.detection_pink_knee,
                           d["vibration_white_torque"], d["radiation_pressure_torque"],
                           self.parasitic_lines, self.line_width)


# Calibrated so that the 18 Hz / Q_eff = 0.58 configuration lands at the
# reported minimum effective temperature; not measured values.
CALIBRATED_BUDGET = NoiseBudget(
    detection_white=2.38e-21,
    detection_pink_knee=3.0,
    vibration_white_torque=3.06e-37,
)


def chi_mech(f, params: OscillatorParams, damping=None):
    """Mechanical susceptibility (omega0^2 - omega^2 + i omega gamma(omega))^-1 / I."""
    d = _damping(params, damping)
    w = TWO_PI * np.asarray(f, dtype=float)
    return 1.0 / (params.inertia * (params.omega0**2 - w**2 + 1j * w * d.rate(w)))


def chi_dc(params: OscillatorParams) -> float:
    return 1.0 / (params.inertia * params.omega0**2)


def thermal_torque_psd(f, params: OscillatorParams, damping=None,
                       const: PhysicalConstants = CONSTANTS):
    """One-sided thermal torque PSD 4 k_B T0 I gamma(omega)."""
    d = _damping(params, damping)
    w = TWO_PI * np.asarray(f, dtype=float)
    return 4.0 * const.k_B * params.T0 * params.inertia * d.rate(w)


def thermal_angle_psd(f, params, damping=None, const=CONSTANTS):
    return np.abs(chi_mech(f, params, damping)) ** 2 * thermal_torque_psd(f, params, damping, const)


def zp_angle_psd(f, params: OscillatorParams, damping=None, const: PhysicalConstants = CONSTANTS):
    """Zero-point angle PSD: thermal angle PSD divided by 2 n_th + 1."""
    n_th = thermal_occupation(params.T0, params.omega0, const)
    return thermal_angle_psd(f, params, damping, const) / (2.0 * n_th + 1.0)


def loop_filter_G(f, filt: LoopFilter, params: OscillatorParams):
    w = TWO_PI * np.asarray(f, dtype=float)
    G = filt.g / chi_dc(params) * (1.0 + 1j * w / filt.omega_lead)
    if filt.exact:
        G = G / (1.0 + 1j * w / filt.omega_lag)
    return G


def chi_eff(f, filt: LoopFilter, params: OscillatorParams, damping=None):
    """Closed-loop susceptibility chi/(1 + G chi)."""
    chi = chi_mech(f, params, damping)
    return chi / (1.0 + loop_filter_G(f, filt, params) * chi)


def chi_eff_closed(f, filt: LoopFilter, params: OscillatorParams, damping=None):
    """Resonator form (omega_eff^2 - omega^2 + i omega gamma_eff)^-1 / I of the lead-only loop."""
    d = _damping(params, damping)
    w = TWO_PI * np.asarray(f, dtype=float)
    gamma_eff = filt.gamma_fb(params) + d.rate(w)
    return 1.0 / (params.inertia * (filt.omega_eff(params) ** 2 - w**2 + 1j * w * gamma_eff))


def chi_app(f, f_eff: float, params: OscillatorParams, damping=None):
    """Frequency-shifted oscillator keeping only its intrinsic damping."""
    d = _damping(params, damping)
    w = TWO_PI * np.asarray(f, dtype=float)
    return 1.0 / (params.inertia * ((TWO_PI * f_eff) ** 2 - w**2 + 1j * w * d.rate(w)))


def chi_imp(f, filt: LoopFilter, params: OscillatorParams):
    """Imprecision transfer (w_eff^2 - w0^2 + i w gamma_eff)/(w_eff^2 - w^2 + i w gamma_eff).

    gamma_eff here is the feedback damping only; the intrinsic part is
    negligible next to it.
    """
    w = TWO_PI * np.asarray(f, dtype=float)
    we2 = filt.omega_eff(params) ** 2
    ge = filt.gamma_fb(params)
    return (we2 - params.omega0**2 + 1j * w * ge) / (we2 - w**2 + 1j * w * ge)


def chi_imp_composed(f, filt: LoopFilter, params: OscillatorParams, damping=None):
    return loop_filter_G(f, filt, params) * chi_eff(f, filt, params, damping)


@dataclass(frozen=True)
class LoopPSD:
    """Closed-loop angle PSD and its additive parts (rad^2/Hz)."""

    freqs: np.ndarray
    thermal: np.ndarray
    imprinted: np.ndarray
    vibration: np.ndarray
    radiation: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.thermal + self.imprinted + self.vibration + self.radiation

    def record(self) -> SpectrumRecord:
        return SpectrumRecord(self.freqs, self.total, "rad^2/Hz", 1)


def closed_loop_angle_psd(f, filt: LoopFilter, params: OscillatorParams, damping=None,
                          budget: NoiseBudget = NoiseBudget(),
                          const: PhysicalConstants = CONSTANTS) -> LoopPSD:
    """Angle PSD |chi_eff|^2 S_pas + |chi_imp|^2 S_imp with per-term breakdown.

    The imprinted term uses the composed transfer G*chi_eff so that it stays
    consistent with the loop filter actually applied (exact or lead-only).
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    ce2 = np.abs(chi_eff(f, filt, params, damping)) ** 2
    ci2 = np.abs(chi_imp_composed(f, filt, params, damping)) ** 2
    return LoopPSD(
        freqs=f,
        thermal=ce2 * thermal_torque_psd(f, params, damping, const),
        imprinted=ci2 * budget.detection_psd(f),
        vibration=ce2 * budget.vibration_white_torque,
        radiation=ce2 * budget.radiation_pressure_torque,
    )


def free_running_angle_psd(f, params: OscillatorParams, damping=None,
                           budget: NoiseBudget = NoiseBudget(), const=CONSTANTS):
    """Open-loop measured angle PSD: passive torques through chi plus readout noise."""
    chi2 = np.abs(chi_mech(f, params, damping)) ** 2
    s_tau = (thermal_torque_psd(f, params, damping, const) + budget.vibration_white_torque
             + budget.radiation_pressure_torque)
    return chi2 * s_tau + budget.detection_psd(f)


@dataclass(frozen=True)
class StabilityReport:
    margin_deg: float
    unity_freq_hz: float | None
    stable: bool
    crossing: bool
    note: str = ""


def loop_gain(f, filt, params, damping=None):
    return loop_filter_G(f, filt, params) * chi_mech(f, params, damping)


def stability_margin(filt: LoopFilter, params: OscillatorParams, damping=None,
                     f_min: float | None = None, f_max: float | None = None) -> StabilityReport:
    """Phase margin at the highest unity crossing of |G chi|.

    Stable iff the margin is positive and the crossing lies below the lag
    corner. Without a crossing the margin at the maximum-gain point is
    reported and ``crossing`` is False.
    """
    from scipy.optimize import brentq

    f_min = f_min or params.f0 * 1e-3
    f_max = f_max or 100.0 * filt.omega_lag / TWO_PI
    f = np.geomspace(f_min, f_max, 20000)
    L = loop_gain(f, filt, params, damping)
    mag = np.abs(L)
    above = mag >= 1.0
    idx = np.nonzero(above[:-1] != above[1:])[0]
    if idx.size == 0:
        k = int(np.argmax(mag))
        margin = 180.0 + math.degrees(np.angle(L[k])) if mag[k] > 0 else 180.0
        return StabilityReport(margin, None, bool(mag.max() < 1.0), False,
                               "no unity-gain crossing; margin at maximum-gain point")
    i = idx[-1]
    fc = brentq(lambda x: abs(loop_gain(x, filt, params, damping)) - 1.0, f[i], f[i + 1],
                xtol=1e-12, rtol=1e-12)
    phase = math.degrees(np.angle(loop_gain(fc, filt, params, damping)))
    margin = 180.0 + phase
    if margin > 180.0:
        margin -= 360.0
    below_lag = TWO_PI * fc < filt.omega_lag or not filt.exact
    stable = margin > 0 and below_lag
    note = "" if below_lag else "unity-gain frequency above omega_lag"
    return StabilityReport(margin, fc, stable, True, note)


def closed_loop_poles(filt: LoopFilter, params: OscillatorParams, gamma: float | None = None):
    """Poles of the loop with viscous mechanics at rate ``gamma`` (rad/s)."""
    gamma = params.gamma0 if gamma is None else gamma
    w0 = params.omega0
    mech = np.array([1.0, gamma, w0**2])
    lead = np.array([1.0 / filt.omega_lead, 1.0]) * filt.g * w0**2
    if filt.exact:
        den = np.polymul(mech, [1.0 / filt.omega_lag, 1.0])
        char = np.polyadd(den, lead)
    else:
        char = np.polyadd(mech, lead)
    return np.roots(char)


def torque_referred_psd(S_theta: SpectrumRecord, params: OscillatorParams,
                        damping=None) -> SpectrumRecord:
    """Divide an angle PSD by |chi|^2 to express it as an equivalent torque PSD."""
    if np.any(S_theta.freqs <= 0):
        raise ValueError("torque referral needs strictly positive frequencies")
    chi2 = np.abs(chi_mech(S_theta.freqs, params, damping)) ** 2
    return SpectrumRecord(S_theta.freqs, S_theta.psd / chi2, "(N m)^2/Hz", S_theta.segments)


def angle_referred_psd(S_tau: SpectrumRecord, params: OscillatorParams,
                       damping=None, freqs=None) -> SpectrumRecord:
    """Inverse of :func:`torque_referred_psd`; ``freqs`` must match the record grid."""
    if freqs is not None and not np.array_equal(np.asarray(freqs, float), S_tau.freqs):
        raise ValueError("frequency grids differ")
    chi2 = np.abs(chi_mech(S_tau.freqs, params, damping)) ** 2
    return SpectrumRecord(S_tau.freqs, S_tau.psd * chi2, "rad^2/Hz", S_tau.segments)
