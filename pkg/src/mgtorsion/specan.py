"""Spectral estimation, band integrals, effective temperature and model fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, signal, special, stats

from .physcore import CONSTANTS, TWO_PI, OscillatorParams, PhysicalConstants
from .records import SpectrumRecord, TimeSeries
from . import response as rsp

DEFAULT_BAND = (8.0, 28.0)

# Power correlation between Hann-windowed DFT bins one and two apart.
HANN_BIN_CORRELATION = (4.0 / 9.0, 1.0 / 36.0)
# Correlation between 50%-overlapping Hann segments.
_HANN_OVERLAP_RHO = 0.1667


class FitError(RuntimeError):
    """Raised when a fit does not converge; ``diagnostics`` holds residual details."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def welch_psd(series: TimeSeries, segment_seconds: float = 10.0,
              overlap: float = 0.5) -> SpectrumRecord:
    """Hann-window Welch estimate, density-normalised, DC bin dropped."""
    nper = int(round(segment_seconds * series.rate))
    if nper < 16:
        raise ValueError("segment must contain at least 16 samples")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    if series.samples.size < nper:
        raise ValueError("series is shorter than one segment")
    nover = int(round(overlap * nper))
    f, p = signal.welch(series.samples, fs=series.rate, window="hann", nperseg=nper,
                        noverlap=nover, detrend="constant", scaling="density")
    step = nper - nover
    k = 1 + (series.samples.size - nper) // step
    unit = f"{series.unit}^2/Hz"
    return SpectrumRecord(f[1:], p[1:], unit, int(k))


def equivalent_dof(segments: int, overlap: float = 0.5) -> float:
    """Degrees of freedom of a Hann Welch estimate with ``segments`` averages."""
    if segments <= 1:
        return 2.0
    rho = _HANN_OVERLAP_RHO if overlap > 0 else 0.0
    return 2.0 * segments / (1.0 + 2.0 * rho**2 * (segments - 1) / segments)


def log_bias(segments: int) -> float:
    """E[ln S_hat/S] for a chi-squared Welch estimate."""
    half = equivalent_dof(segments) / 2.0
    return float(special.digamma(half) - math.log(half))


def log_variance(segments: int) -> float:
    return float(special.polygamma(1, equivalent_dof(segments) / 2.0))


def band_power(rec: SpectrumRecord, f1: float, f2: float) -> float:
    """Sum of PSD * bin width over bins with f1 <= f <= f2."""
    m = (rec.freqs >= f1) & (rec.freqs <= f2)
    if not np.any(m):
        raise ValueError(f"no bins inside [{f1}, {f2}] Hz")
    return float(np.sum(rec.psd[m]) * rec.df)


def band_integral(func: Callable, f1: float, f2: float, peaks=(), rtol: float = 1e-10) -> float:
    """Integral of ``func`` over [f1, f2] Hz with narrow Lorentzian peaks handled.

    ``peaks`` holds (centre Hz, half-width Hz) pairs. Around each peak the
    variable is changed to u = atan((f - fc)/hw), which flattens a
    Lorentzian so adaptive quadrature sees a smooth integrand.
    """
    if not f2 > f1:
        raise ValueError("need f2 > f1")
    g = lambda x: float(np.asarray(func(np.array([x])))[0])
    pieces = []
    edges = [f1, f2]
    for fc, hw in peaks:
        lo, hi = fc - 1e3 * hw, fc + 1e3 * hw
        if hi <= f1 or lo >= f2:
            continue
        lo, hi = max(lo, f1), min(hi, f2)
        ua, ub = math.atan((lo - fc) / hw), math.atan((hi - fc) / hw)

        def h(u, fc=fc, hw=hw):
            t = math.tan(u)
            return g(fc + hw * t) * hw * (1.0 + t * t)

        pieces.append(integrate.quad(h, ua, ub, epsabs=0, epsrel=rtol, limit=400)[0])
        edges += [lo, hi]
    edges = sorted(set(edges))
    covered = [(max(fc - 1e3 * hw, f1), min(fc + 1e3 * hw, f2)) for fc, hw in peaks]
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        if any(lo <= mid <= hi for lo, hi in covered):
            continue
        pieces.append(integrate.quad(g, a, b, epsabs=0, epsrel=rtol, limit=400)[0])
    return float(math.fsum(pieces))


@dataclass(frozen=True)
class TemperatureResult:
    T_eff: float
    n: float
    measured_power: float
    reference_power: float
    band: tuple


def apparent_angle_psd(f, f_eff: float, params: OscillatorParams, damping=None,
                       const: PhysicalConstants = CONSTANTS):
    """|chi_app|^2 S_th: the frequency-shifted oscillator driven by thermal torque only."""
    return (np.abs(rsp.chi_app(f, f_eff, params, damping)) ** 2
            * rsp.thermal_torque_psd(f, params, damping, const))


def _apparent_peak(f_eff, params, damping):
    d = rsp._damping(params, damping)
    gamma_app = float(d.rate(TWO_PI * f_eff))
    return (f_eff, gamma_app / (2.0 * TWO_PI))


def effective_temperature(measured, params: OscillatorParams, f_eff: float, damping=None,
                          f1: float = DEFAULT_BAND[0], f2: float = DEFAULT_BAND[1],
                          peaks=(), const: PhysicalConstants = CONSTANTS) -> TemperatureResult:
    """T_eff = T0 * (band power of measured) / (band power of the apparent oscillator).

    ``measured`` is a SpectrumRecord (summed over its bins) or a callable
    PSD model (integrated by quadrature with optional ``peaks``).
    """
    ref_peak = _apparent_peak(f_eff, params, damping)
    ref = band_integral(lambda f: apparent_angle_psd(f, f_eff, params, damping, const),
                        f1, f2, peaks=[ref_peak])
    if isinstance(measured, SpectrumRecord):
        if measured.freqs[0] > f1 or measured.freqs[-1] < f2:
            raise ValueError("band lies outside the spectrum grid")
        num = band_power(measured, f1, f2)
    else:
        # without hints, assume the model peaks where the reference does
        num = band_integral(measured, f1, f2, peaks=peaks or [ref_peak])
    T_eff = params.T0 * num / ref
    n = const.k_B * T_eff / (const.hbar * TWO_PI * f_eff)
    return TemperatureResult(T_eff, n, num, ref, (f1, f2))


def equipartition_capture(params: OscillatorParams, f_eff: float, width_factor: float = 10.0,
                          damping=None, const: PhysicalConstants = CONSTANTS) -> float:
    """Fraction of k_B T0/(I w_eff^2) inside a band of width_factor*gamma_app/2pi about f_eff."""
    fc, hw = _apparent_peak(f_eff, params, damping)
    half = width_factor * (2.0 * hw) / 2.0
    p = band_integral(lambda f: apparent_angle_psd(f, f_eff, params, damping, const),
                      fc - half, fc + half, peaks=[(fc, hw)])
    return p * params.inertia * (TWO_PI * f_eff) ** 2 / (const.k_B * params.T0)


@dataclass(frozen=True)
class FitResult:
    f_eff: float | None = None
    Q_eff: float | None = None
    vibration_white_torque: float | None = None
    residual: float = 0.0
    confidence: dict = field(default_factory=dict)
    dof: int = 0
    message: str = ""

    def to_dict(self) -> dict:
        params = {}
        for name in ("f_eff", "Q_eff", "vibration_white_torque"):
            v = getattr(self, name)
            if v is not None:
                lo, hi = self.confidence[name]
                params[name] = {"value": v, "ci95": [lo, hi]}
        return {"parameters": params, "residual_chi2_per_dof": self.residual,
                "dof": self.dof, "message": self.message}


def _sandwich_cov(J: np.ndarray, s2: float, correlated: bool) -> np.ndarray:
    JtJ_inv = np.linalg.inv(J.T @ J)
    if not correlated:
        return s2 * JtJ_inv
    n = J.shape[0]
    R = np.eye(n)
    for k, rho in enumerate(HANN_BIN_CORRELATION, start=1):
        R += rho * (np.eye(n, k=k) + np.eye(n, k=-k))
    return s2 * JtJ_inv @ (J.T @ R @ J) @ JtJ_inv


def _log_chi_model(f, ln_fe, ln_q, inertia):
    w = TWO_PI * f
    we = TWO_PI * math.exp(ln_fe)
    q = math.exp(ln_q)
    return -np.log(inertia) - 0.5 * np.log((we**2 - w**2) ** 2 + (w * we / q) ** 2)


def _seed_resonance(f, mag):
    k = int(np.argmax(mag))
    f_seed = f[k]
    half = mag[k] / math.sqrt(2.0)
    above = np.nonzero(mag >= half)[0]
    width = f[above[-1]] - f[above[0]] if above.size > 1 else 0.0
    q_seed = f_seed / width if width > 0 else 1.0
    return f_seed, max(q_seed, 0.3)


def fit_susceptibility(driven: SpectrumRecord, drive_torque_psd: float, params: OscillatorParams,
                       f1: float | None = None, f2: float | None = None,
                       background: Callable | None = None) -> FitResult:
    """Fit the resonator magnitude |chi_eff| to sqrt(S_theta / S_tau).

    Least squares on log-magnitude with uniform weights; 95% intervals from
    the residual covariance.  Records with ``segments == 1`` are treated as
    noise-free model spectra.

    Parameters
    ----------
    background : callable, optional
        Undriven angle PSD model ``f -> rad^2/Hz`` subtracted before the
        fit. Bins where the subtraction leaves nothing are dropped.
    """
    if not drive_torque_psd > 0:
        raise ValueError("drive torque PSD must be positive")
    rec = driven.band(f1 if f1 is not None else driven.freqs[0],
                      f2 if f2 is not None else driven.freqs[-1])
    psd = rec.psd
    if background is not None:
        psd = psd - np.asarray(background(rec.freqs), dtype=float)
        keep = psd > 0
        rec = SpectrumRecord(rec.freqs[keep], psd[keep], rec.unit, rec.segments)
        psd = rec.psd
    if rec.freqs.size < 4:
        raise ValueError("not enough bins to fit")
    f = rec.freqs
    estimated = rec.segments > 1
    bias = 0.5 * log_bias(rec.segments) if estimated else 0.0
    y = 0.5 * np.log(psd / drive_torque_psd) - bias
    inertia = params.inertia

    def resid(p):
        return y - _log_chi_model(f, p[0], p[1], inertia)

    f_seed, q_seed = _seed_resonance(f, np.exp(y))
    starts = [(f_seed, q_seed)] + [(f_seed, q) for q in (0.3, 1.0, 3.0, 10.0, 30.0)]
    best = None
    for fs, qs in starts:
        try:
            sol = optimize.least_squares(resid, [math.log(fs), math.log(qs)], method="lm",
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        except ValueError:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    dof = f.size - 2
    if best is None or not best.success:
        raise FitError("susceptibility fit did not converge",
                       {"message": getattr(best, "message", "no start converged")})
    fe, q = math.exp(best.x[0]), math.exp(best.x[1])
    rss = float(np.sum(best.fun**2))
    if not (f[0] <= fe <= f[-1]):
        raise FitError("fitted resonance lies outside the data band",
                       {"f_eff": fe, "band": (float(f[0]), float(f[-1])), "rss": rss})
    s2 = rss / dof
    cov = _sandwich_cov(best.jac, s2, estimated)
    tq = stats.t.ppf(0.975, dof)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ci_fe = (math.exp(best.x[0] - tq * se[0]), math.exp(best.x[0] + tq * se[0]))
    ci_q = (math.exp(best.x[1] - tq * se[1]), math.exp(best.x[1] + tq * se[1]))
    sigma2 = 0.25 * log_variance(rec.segments) if estimated else 1.0
    return FitResult(f_eff=fe, Q_eff=q, residual=s2 / sigma2,
                     confidence={"f_eff": ci_fe, "Q_eff": ci_q}, dof=dof,
                     message="converged")


def fit_noise_budget(measured: SpectrumRecord, filt: rsp.LoopFilter, params: OscillatorParams,
                     damping=None, budget_known: rsp.NoiseBudget = rsp.NoiseBudget(),
                     f1: float = DEFAULT_BAND[0], f2: float = DEFAULT_BAND[1]) -> FitResult:
    """Fit the white vibration torque level with thermal and detection terms fixed.

    The level may come out negative (it is an unconstrained linear
    amplitude) so that a null result can be recognised from its interval.
    """
    rec = measured.band(f1, f2)
    if rec.freqs.size < 3:
        raise ValueError("not enough bins in the fit band")
    if np.any(rec.psd <= 0):
        raise FitError("log-spectrum fit needs a strictly positive PSD in the band")
    f = rec.freqs
    known = rsp.NoiseBudget(budget_known.detection_white, budget_known.detection_pink_knee, 0.0,
                            budget_known.radiation_pressure_torque, budget_known.parasitic_lines,
                            budget_known.line_width)
    base = rsp.closed_loop_angle_psd(f, filt, params, damping, known).total
    shape = np.abs(rsp.chi_eff(f, filt, params, damping)) ** 2
    estimated = rec.segments > 1
    y = np.log(rec.psd) - (log_bias(rec.segments) if estimated else 0.0)
    scale = float(np.median(base / shape))

    def resid(p):
        return y - np.log(base + p[0] * scale * shape)

    lower = -float(np.min(base / shape)) / scale * (1 - 1e-9)
    x0 = max(0.0, lower * 0.5)
    sol = optimize.least_squares(resid, [x0], bounds=([lower], [np.inf]), xtol=1e-14,
                                 ftol=1e-14, gtol=1e-14)
    if not sol.success:
        raise FitError("noise-budget fit did not converge", {"message": sol.message})
    dof = f.size - 1
    s2 = float(np.sum(sol.fun**2)) / dof
    cov = _sandwich_cov(sol.jac, s2, estimated)
    tq = stats.t.ppf(0.975, dof)
    v = float(sol.x[0]) * scale
    se = math.sqrt(cov[0, 0]) * scale
    sigma2 = log_variance(rec.segments) if estimated else 1.0
    return FitResult(vibration_white_torque=v, residual=s2 / sigma2,
                     confidence={"vibration_white_torque": (v - tq * se, v + tq * se)},
                     dof=dof, message="converged")


def _loop_peaks(filt, params):
    if filt.g == 0:
        return [(params.f0, params.gamma0 / (2 * TWO_PI))]
    ge = filt.gamma_fb(params) + params.gamma0
    return [(filt.omega_eff(params) / TWO_PI, ge / (2 * TWO_PI))]


def fb_noise_fraction(filt: rsp.LoopFilter, params: OscillatorParams, damping=None,
                      budget: rsp.NoiseBudget = rsp.NoiseBudget(),
                      f1: float = DEFAULT_BAND[0], f2: float = DEFAULT_BAND[1]) -> float:
    """Share of the in-band angle variance that is feedback-imprinted detection noise."""
    peaks = _loop_peaks(filt, params)
    imp = band_integral(lambda f: rsp.closed_loop_angle_psd(f, filt, params, damping, budget).imprinted,
                        f1, f2, peaks)
    if imp == 0.0:
        return 0.0
    tot = band_integral(lambda f: rsp.closed_loop_angle_psd(f, filt, params, damping, budget).total,
                        f1, f2, peaks)
    return min(max(imp / tot, 0.0), 1.0)


def model_temperature(filt: rsp.LoopFilter, params: OscillatorParams, damping=None,
                      budget: rsp.NoiseBudget = rsp.NoiseBudget(),
                      f1: float = DEFAULT_BAND[0], f2: float = DEFAULT_BAND[1]) -> TemperatureResult:
    """Band-referenced effective temperature of the analytic closed-loop spectrum."""
    f_eff = filt.omega_eff(params) / TWO_PI
    return effective_temperature(
        lambda f: rsp.closed_loop_angle_psd(f, filt, params, damping, budget).total,
        params, f_eff, damping, f1, f2, peaks=_loop_peaks(filt, params))
