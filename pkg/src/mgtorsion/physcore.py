"""Physical constants, oscillator parameters and derived quantities.

All frequencies handed in or stored are in Hz. Angular frequencies are
formed internally as ``2*pi*f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA values rounded to 6 significant digits (SI units)."""

    G: float = 6.67430e-11
    hbar: float = 1.05457e-34
    k_B: float = 1.38065e-23
    c: float = 2.99792e8

    def __post_init__(self):
        for name in ("G", "hbar", "k_B", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"constant {name} must be positive")


CONSTANTS = PhysicalConstants()

STRUCTURAL = "structural"
VISCOUS = "viscous"
DAMPING_LAWS = (STRUCTURAL, VISCOUS)


@dataclass(frozen=True)
class OscillatorParams:
    """Mechanical identity of the torsion pendulum.

    Parameters
    ----------
    inertia : float
        Moment of inertia (kg m^2).
    f0 : float
        Bare torsional resonance (Hz).
    Q0 : float
        Bare quality factor.
    T0 : float
        Bath temperature (K).
    damping_law : str
        ``"structural"`` (loss rate falls as 1/f) or ``"viscous"``.
    lever_arm : float
        Distance from the rotation axis used to turn angles into lengths (m).
    """

    inertia: float = 3.3e-13
    f0: float = 6.72
    Q0: float = 8.6e4
    T0: float = 295.0
    damping_law: str = STRUCTURAL
    lever_arm: float = 1.0e-3

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValueError("inertia must be > 0")
        if not self.f0 > 0:
            raise ValueError("f0 must be > 0")
        if not self.Q0 > 0:
            raise ValueError("Q0 must be > 0")
        if not self.T0 >= 0:
            raise ValueError("T0 must be >= 0")
        if not self.lever_arm > 0:
            raise ValueError("lever_arm must be > 0")
        if self.damping_law not in DAMPING_LAWS:
            raise ValueError(f"damping_law must be one of {DAMPING_LAWS}")
        if not math.isfinite(self.gamma0) or self.gamma0 <= 0:
            raise ValueError("gamma0 = omega0/Q0 must be finite and positive")

    @property
    def omega0(self) -> float:
        return TWO_PI * self.f0

    @property
    def gamma0(self) -> float:
        """Bare energy damping rate (rad/s)."""
        return self.omega0 / self.Q0

    def with_damping(self, law: str) -> "OscillatorParams":
        return OscillatorParams(self.inertia, self.f0, self.Q0, self.T0, law, self.lever_arm)


def thermal_occupation(T: float, omega: float, const: PhysicalConstants = CONSTANTS) -> float:
    """High-temperature occupation k_B T / (hbar omega)."""
    return const.k_B * T / (const.hbar * omega)


def zero_point_angle(inertia: float, omega: float, const: PhysicalConstants = CONSTANTS) -> float:
    return math.sqrt(const.hbar / (2.0 * inertia * omega))


def equipartition_angle(params: OscillatorParams, omega: float | None = None,
                        const: PhysicalConstants = CONSTANTS) -> float:
    """RMS angle sqrt(k_B T0 / (I omega^2)) of a thermalised mode."""
    if omega is None:
        omega = params.omega0
    return math.sqrt(const.k_B * params.T0 / (params.inertia * omega**2))


def lead_corner_min(params: OscillatorParams, f_eff: float, Q_eff: float) -> float:
    """Lead corner omega_eff*Q_eff*(1 - omega0^2/omega_eff^2) of the lead-only design (rad/s)."""
    w_eff = TWO_PI * f_eff
    return w_eff * Q_eff * (1.0 - params.omega0**2 / w_eff**2)


@dataclass(frozen=True)
class DerivedQuantities:
    omega0: float
    gamma0: float
    n_th: float
    theta_zp: float
    x_zp: float
    equipartition_angle: float
    Q_app: float
    gamma_app: float
    omega_eff: float
    g_gain: float
    omega_lead_min: float


def derive_all(params: OscillatorParams, f_eff: float | None = None, Q_eff_target: float = 0.5,
               const: PhysicalConstants = CONSTANTS) -> DerivedQuantities:
    """Quantities derived from the oscillator and an optical-spring target.

    ``n_th`` is the bath occupation at the bare resonance; the zero-point
    angle, ``x_zp`` and the apparent damping refer to the shifted mode at
    ``f_eff``. The equipartition angle is that of the bare mode.
    """
    if f_eff is None:
        f_eff = params.f0
    if f_eff < params.f0:
        raise ValueError("f_eff must be >= f0: the optical spring only stiffens")
    if not Q_eff_target > 0:
        raise ValueError("Q_eff_target must be > 0")
    w0 = params.omega0
    w_eff = TWO_PI * f_eff
    theta_zp = zero_point_angle(params.inertia, w_eff, const)
    if f_eff == params.f0:
        g = 0.0
        Q_app = params.Q0
        gamma_app = params.gamma0
    else:
        g = (f_eff / params.f0) ** 2 - 1.0
        Q_app = params.Q0 * (w_eff / w0) ** 2
        gamma_app = params.gamma0 * w0 / w_eff
    return DerivedQuantities(
        omega0=w0,
        gamma0=params.gamma0,
        n_th=thermal_occupation(params.T0, w0, const),
        theta_zp=theta_zp,
        x_zp=theta_zp * params.lever_arm,
        equipartition_angle=equipartition_angle(params, w0, const),
        Q_app=Q_app,
        gamma_app=gamma_app,
        omega_eff=w_eff,
        g_gain=g,
        omega_lead_min=lead_corner_min(params, f_eff, Q_eff_target),
    )
