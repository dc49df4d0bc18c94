"""Gravitational force gradients, geometry factors and the figure of merit eta."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .physcore import CONSTANTS, TWO_PI, PhysicalConstants

G1D, G2D, G3D = "g1D", "g2D", "g3D"
GEOMETRIES = (G1D, G2D, G3D)
MIN_SEPARATION = 50e-6


def _check_geometry(geometry: str) -> None:
    if geometry not in GEOMETRIES:
        raise ValueError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")


def _f2d(a: float, rtol: float) -> float:
    """16 * int_0^inf J1(u)^2 exp(-2 a u) du."""
    u0 = 1e-3
    # J1^2 = u^2/4 - u^4/16 + ...
    c = 2 * a
    small = (u0**3 / 12 - u0**5 / 80) if c * u0 < 1e-6 else integrate.quad(
        lambda u: (u**2 / 4 - u**4 / 16) * math.exp(-c * u), 0, u0)[0]
    u_max = max(60.0, 30.0 / a)
    edges = np.concatenate(([u0], np.arange(math.pi, u_max, math.pi), [u_max]))
    f = lambda u: special.j1(u) ** 2 * np.exp(-c * u)
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def fixed(n):
        x, w = np.polynomial.legendre.leggauss(n)
        return (f(mid[:, None] + half[:, None] * x) @ w) * half

    p1, p2 = fixed(24), fixed(40)
    total = small + p2.sum()
    # intervals where the two fixed rules disagree are redone adaptively
    bad = np.abs(p2 - p1) > rtol * 1e-2 * abs(total)
    for i in np.flatnonzero(bad):
        total += integrate.quad(f, lo[i], hi[i], epsabs=0.0, epsrel=rtol * 0.1,
                                limit=200)[0] - p2[i]
    # tail, J1^2 averaged to 1/(pi u)
    total += special.exp1(c * u_max) / math.pi
    return 16.0 * total


def geometry_factor(a: float, geometry: str, rtol: float = 1e-6) -> float:
    """Dimensionless force-gradient factor f(a) with a = d/L.

    Parameters
    ----------
    a : float
        Separation over major dimension, > 0.
    geometry : {"g1D", "g2D", "g3D"}
        Rods, disks or point masses.
    rtol : float
        Relative tolerance of the disk quadrature.
    """
    _check_geometry(geometry)
    if not a > 0:
        raise ValueError("a must be positive")
    if geometry == G3D:
        return 1.0 / a**3
    if geometry == G1D:
        return 1.0 / (a**2 * math.sqrt(1.0 + a**2))
    return _f2d(a, rtol)


def force_gradient(m: float, L: float, d: float, geometry: str,
                   const: PhysicalConstants = CONSTANTS) -> float:
    """|grad F| = 2 G m^2 / L^3 f(d/L) in N/m."""
    if min(m, L, d) <= 0:
        raise ValueError("m, L and d must be positive")
    return 2.0 * const.G * m**2 / L**3 * geometry_factor(d / L, geometry)


class OracleResult(NamedTuple):
    grad_F: float
    error: float


def _panel_nodes(lo: float, hi: float, n: int, panels: int):
    x, w = np.polynomial.legendre.leggauss(n)
    e = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(e)
    mid = 0.5 * (e[:-1] + e[1:])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _energy_rods(d: float, L: float, res: int) -> float:
    """-sum over two parallel rods of 1/r, per unit (m/L)^2."""
    s, w = _panel_nodes(0.0, L, 8, res // 8)
    r = np.sqrt(d**2 + (s[:, None] - s[None, :]) ** 2)
    return -float(w @ (1.0 / r) @ w)


def _energy_disks(d: float, L: float, res: int) -> float:
    """-sum over two coaxial disks of 1/r, per unit (m/area)^2."""
    R = 0.5 * L
    r, wr = _panel_nodes(0.0, R, 8, max(1, res // 8))
    phi, wp = _panel_nodes(0.0, math.pi, 8, max(1, res // 8))
    cosp = np.cos(phi)
    total = 0.0
    for ri, wi in zip(r, wr):
        rr = np.sqrt(d**2 + ri**2 + r[:, None] ** 2 - 2 * ri * r[:, None] * cosp[None, :])
        total += wi * ri * float((wr * r) @ (1.0 / rr) @ wp)
    # 2 pi from the free absolute angle, 2 from phi in [0, pi]
    return -4.0 * math.pi * total


def brute_force_gradient(m: float, L: float, d: float, geometry: str, resolution: int = 128,
                         const: PhysicalConstants = CONSTANTS) -> OracleResult:
    """Force gradient by direct integration of the pairwise Newtonian energy.

    U(d) is evaluated by composite Gauss-Legendre quadrature over both bodies
    and differentiated twice by central differences with h = d/200 and
    Richardson extrapolation. The error estimate combines the Richardson
    correction and the change on halving the quadrature resolution.

    Raises
    ------
    ArithmeticError
        If the estimated relative error exceeds 1%.
    """
    _check_geometry(geometry)
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    if min(m, L, d) <= 0:
        raise ValueError("m, L and d must be positive")
    if geometry == G3D:
        energy = lambda x, res: -1.0 / x
        scale = const.G * m**2
    elif geometry == G1D:
        energy = lambda x, res: _energy_rods(x, L, res)
        scale = const.G * (m / L) ** 2
    else:
        energy = lambda x, res: _energy_disks(x, L, res)
        scale = const.G * (m / (math.pi * (0.5 * L) ** 2)) ** 2

    def second_derivative(h, res):
        return (energy(d + h, res) - 2 * energy(d, res) + energy(d - h, res)) / h**2

    h = d / 200.0

    def richardson(res):
        d1, d2 = second_derivative(h, res), second_derivative(h / 2, res)
        return (4 * d2 - d1) / 3, abs(d2 - d1) / 3

    value, fd_err = richardson(resolution)
    coarse, _ = richardson(resolution // 2) if geometry != G3D else (value, 0.0)
    err = fd_err + abs(value - coarse)
    grad = abs(scale * value)
    rel = err / abs(value)
    if rel > 0.01:
        raise ArithmeticError(f"brute-force error estimate {rel:.2%} exceeds 1%")
    return OracleResult(grad, rel * grad)


@dataclass(frozen=True)
class FomResult:
    grad_F: float
    eta: float
    eta_zp: float
    ent_rate_ground: float
    thermal_decoherence: float

    def __post_init__(self):
        if min(self.grad_F, self.eta, self.eta_zp, self.ent_rate_ground,
               self.thermal_decoherence) < 0:
            raise ValueError("figure-of-merit fields must be >= 0")


def eta(xi: float, grad_F: float, gamma: float, x_zp: float | None = None,
        const: PhysicalConstants = CONSTANTS) -> FomResult:
    """Figure of merit eta = sqrt(xi^2 |grad F| / (hbar gamma)).

    Parameters
    ----------
    xi : float
        Coherence length (m).
    grad_F : float
        Force gradient (N/m).
    gamma : float
        Bare energy damping rate (rad/s).
    x_zp : float, optional
        Zero-point amplitude for the ground-state value; defaults to ``xi``.
    """
    if min(xi, grad_F, gamma) <= 0:
        raise ValueError("xi, grad_F and gamma must be positive")
    x_zp = xi if x_zp is None else x_zp
    e = math.sqrt(xi**2 * grad_F / (const.hbar * gamma))
    ezp = math.sqrt(x_zp**2 * grad_F / (const.hbar * gamma))
    rate0 = x_zp**2 * grad_F / const.hbar
    return FomResult(grad_F, e, ezp, rate0, rate0 / (2 * ezp**2))


@dataclass(frozen=True)
class PlatformRecord:
    label: str
    mass: float
    freq: float
    gamma_over_2pi: float
    xi: float
    L: float
    d: float
    geometry: str
    x_zp: float | None = None
    notes: str = ""
    platform: str = ""
    effective_mass: bool = False
    separation_exempt: bool = False
    gamma_alt_over_2pi: float | None = None
    inertia: float | None = None
    lever_arm: float | None = None

    def __post_init__(self):
        _check_geometry(self.geometry)
        for name in ("mass", "freq", "gamma_over_2pi", "xi", "L", "d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{self.label}: {name} must be positive")
        for name in ("x_zp", "gamma_alt_over_2pi", "inertia", "lever_arm"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{self.label}: {name} must be positive")
        if self.d < MIN_SEPARATION and not self.separation_exempt:
            raise ValueError(f"{self.label}: separation {self.d:g} m is below 50 um")

    @classmethod
    def from_dict(cls, data: dict) -> "PlatformRecord":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown platform fields: {sorted(unknown)}")
        return cls(**data)

    def recomputed_x_zp(self, const: PhysicalConstants = CONSTANTS) -> float:
        """Zero-point amplitude from (m, f), or from (I, f) times the lever arm."""
        omega = TWO_PI * self.freq
        if self.inertia is not None and self.lever_arm is not None:
            return math.sqrt(const.hbar / (2 * self.inertia * omega)) * self.lever_arm
        return math.sqrt(const.hbar / (2 * self.mass * omega))


@dataclass
class PlatformRow:
    record: PlatformRecord
    result: FomResult | None
    x_zp_used: float | None = None
    x_zp_ratio: float | None = None
    eta_alt: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = {"label": self.record.label, "platform": self.record.platform,
               "notes": self.record.notes, "error": self.error,
               "x_zp_used": self.x_zp_used, "x_zp_ratio": self.x_zp_ratio,
               "eta_alt": self.eta_alt}
        if self.result is not None:
            out.update(asdict(self.result))
        return out


def load_platforms(path=None) -> list[dict]:
    """Raw platform dictionaries; the shipped table when ``path`` is None."""
    if path is None:
        text = resources.files("mgtorsion").joinpath("data/platforms.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("platform file must hold a JSON array")
    return data


def platform_table(records: list, const: PhysicalConstants = CONSTANTS) -> list[PlatformRow]:
    """Evaluate eta for each record; rows sorted by decreasing eta.

    Records may be dictionaries or PlatformRecord instances. Invalid rows are
    returned with ``error`` set and sort last. Effective-mass rows keep their
    tabulated x_zp; the others use the recomputed value.
    """
    rows = []
    for rec in records:
        try:
            if isinstance(rec, dict):
                rec = PlatformRecord.from_dict(rec)
            x_re = rec.recomputed_x_zp(const)
            use = rec.x_zp if (rec.effective_mass and rec.x_zp is not None) else x_re
            grad = force_gradient(rec.mass, rec.L, rec.d, rec.geometry, const)
            res = eta(rec.xi, grad, TWO_PI * rec.gamma_over_2pi, use, const)
            alt = None
            if rec.gamma_alt_over_2pi is not None:
                alt = eta(rec.xi, grad, TWO_PI * rec.gamma_alt_over_2pi, use, const).eta
            ratio = x_re / rec.x_zp if rec.x_zp is not None else None
            rows.append(PlatformRow(rec, res, use, ratio, alt))
        except (ValueError, TypeError) as exc:
            label = rec.get("label", "?") if isinstance(rec, dict) else getattr(rec, "label", "?")
            stub = PlatformRecord.__new__(PlatformRecord)
            object.__setattr__(stub, "label", label)
            for k in ("platform", "notes"):
                object.__setattr__(stub, k, rec.get(k, "") if isinstance(rec, dict) else "")
            rows.append(PlatformRow(stub, None, error=str(exc)))
    return sorted(rows, key=lambda r: -r.result.eta if r.result else math.inf)
