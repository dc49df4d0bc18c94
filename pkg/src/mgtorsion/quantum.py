"""Quantum coherence length of thermal and feedback-damped Gaussian states.

Positions and momenta are generic: the linear frame uses (m, x_zp) and the
angular frame uses (I, theta_zp) with the same formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .physcore import CONSTANTS, PhysicalConstants

ANGULAR = "angular"
LINEAR = "linear"


@dataclass(frozen=True)
class GaussianState:
    """Second moments of a zero-mean Gaussian state.

    ``Vxp`` is the symmetrised cross-covariance <xp + px>/2.
    """
    Vxx: float
    Vpp: float
    Vxp: float = 0.0
    frame: str = LINEAR
    hbar: float = CONSTANTS.hbar

    def __post_init__(self):
        if not (self.Vxx > 0 and self.Vpp > 0):
            raise ValueError("variances must be positive")
        if self.frame not in (ANGULAR, LINEAR):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.determinant < (self.hbar / 2) ** 2 * (1 - 1e-9):
            raise ValueError("covariance violates the uncertainty relation")

    @property
    def determinant(self) -> float:
        return self.Vxx * self.Vpp - self.Vxp**2

    @classmethod
    def thermal(cls, zp: float, n_th: float, mass_like: float, frame: str = LINEAR,
                const: PhysicalConstants = CONSTANTS) -> "GaussianState":
        """Thermal state of an oscillator whose zero-point amplitude is ``zp``."""
        vxx = zp**2 * (2 * n_th + 1)
        # m Omega from zp^2 = hbar / (2 m Omega)
        m_omega = const.hbar / (2 * zp**2)
        return cls(vxx, m_omega**2 * vxx, 0.0, frame, const.hbar)


@dataclass(frozen=True)
class DiffusionRates:
    """Rates of the feedback master equation.

    D_th and D_m diffuse momentum (units momentum^2/s), D_fb diffuses
    position (units position^2/s).
    """
    D_th: float
    D_m: float
    D_fb: float
    gamma_eff: float
    Omega: float
    mass_like: float

    def __post_init__(self):
        for name in ("D_th", "D_m", "D_fb", "gamma_eff", "Omega", "mass_like"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.Omega <= 0 or self.mass_like <= 0:
            raise ValueError("Omega and mass_like must be positive")

    @property
    def D_x(self) -> float:
        return self.D_th + self.D_m


def thermal_diffusion(zp: float, n_th: float, gamma0: float,
                      const: PhysicalConstants = CONSTANTS) -> float:
    """D_th = gamma0 hbar^2 (2 n_th + 1) / (4 zp^2)."""
    return gamma0 * const.hbar**2 * (2 * n_th + 1) / (4 * zp**2)


def feedback_diffusion(D_m: float, gamma_eff: float, efficiency: float = 1.0,
                       const: PhysicalConstants = CONSTANTS) -> float:
    """Imprinted-noise rate hbar^2 gamma_eff^2 / (16 D_m) for detection efficiency ``efficiency``.

    The unit-efficiency value is divided by the efficiency.
    """
    if D_m <= 0 or not 0 < efficiency <= 1:
        raise ValueError("need D_m > 0 and 0 < efficiency <= 1")
    return const.hbar**2 * gamma_eff**2 / (16 * D_m * efficiency)


def thermal_coherence(x_zp: float, n_th: float) -> tuple[float, float]:
    """Coherence length and position spread of a thermal state.

    Returns
    -------
    xi, delta_x : float
        ``x_zp / sqrt(2 n + 1)`` and ``x_zp * sqrt(2 n + 1)``.
    """
    if n_th < 0:
        raise ValueError("n_th must be >= 0")
    r = math.sqrt(2 * n_th + 1)
    return x_zp / r, x_zp * r


def suppression_factor(Q_eff: float, fb_fraction: float) -> float:
    if Q_eff <= 0:
        raise ValueError("Q_eff must be positive")
    if not 0 <= fb_fraction <= 1:
        raise ValueError("fb_fraction must lie in [0, 1]")
    return 1.0 / math.sqrt(1.0 + fb_fraction / Q_eff**2)


def feedback_coherence_angle(theta_zp: float, n: float, Q_eff: float,
                             fb_fraction: float) -> tuple[float, float]:
    """Coherence angle of the feedback-damped mode.

    Parameters
    ----------
    theta_zp : float
        Zero-point angle at the shifted frequency.
    n : float
        Occupation from the band-integrated angular variance.
    Q_eff : float
        Closed-loop quality factor.
    fb_fraction : float
        Imprinted-to-total angular variance ratio.

    Returns
    -------
    xi_theta, s : float
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    s = suppression_factor(Q_eff, fb_fraction)
    return s * theta_zp / math.sqrt(2 * n + 1), s


def _moment_matrix(rates: DiffusionRates, bath: bool):
    """Linear system dy/dt = M y + b for y = (Vxx, Vpp, Vxp)."""
    m, w, g = rates.mass_like, rates.Omega, rates.gamma_eff
    if bath:
        M = np.array([[0.0, 0.0, 2.0 / m],
                      [0.0, -2 * g, -2 * m * w**2],
                      [-m * w**2, 1.0 / m, -g]])
        b = np.array([2 * rates.D_fb, 2 * rates.D_x, 0.0])
    else:
        M = np.array([[-2 * g, 0.0, 2.0 / m],
                      [0.0, 0.0, -2 * m * w**2],
                      [-m * w**2, 1.0 / m, -g]])
        b = np.array([2 * rates.D_fb, 2 * rates.D_x, 0.0])
    return M, b


def steady_state_moments(rates: DiffusionRates, bath: bool = False, frame: str = LINEAR,
                         const: PhysicalConstants = CONSTANTS) -> GaussianState:
    """Stationary second moments of the damped oscillator.

    ``bath=False`` uses feedback damping acting on position; ``bath=True``
    uses a thermal bath acting on momentum.
    """
    if rates.gamma_eff <= 0:
        raise ValueError("gamma_eff must be positive for a steady state")
    m, w, g = rates.mass_like, rates.Omega, rates.gamma_eff
    dx = rates.D_x
    if bath:
        if rates.D_fb:
            # position diffusion without position damping has no steady state
            raise ValueError("bath model has no steady state with D_fb > 0")
        vpp = dx / g
        vxx = vpp / (m * w) ** 2
        c = 0.0
    else:
        c = dx / (m * w**2)
        vxx = dx / (m**2 * w**2 * g) + rates.D_fb / g
        vpp = (m * w) ** 2 * vxx + g * dx / w**2
    return GaussianState(vxx, vpp, c, frame, const.hbar)


def integrate_moments(rates: DiffusionRates, initial: GaussianState, t_end: float,
                      bath: bool = False, rtol: float = 1e-12) -> GaussianState:
    """Time-integrate the second-moment equations from ``initial`` to ``t_end``.

    Variables are scaled by the steady-state values and time by 1/Omega so
    the integrator works on O(1) numbers.
    """
    M, b = _moment_matrix(rates, bath)
    ss = steady_state_moments(rates, bath, initial.frame, CONSTANTS)
    scale = np.array([ss.Vxx, ss.Vpp, math.sqrt(ss.Vxx * ss.Vpp)])
    w = rates.Omega
    Ms = (M * scale[None, :] / scale[:, None]) / w
    bs = b / scale / w
    y0 = np.array([initial.Vxx, initial.Vpp, initial.Vxp]) / scale
    sol = solve_ivp(lambda t, y: Ms @ y + bs, (0.0, t_end * w), y0, method="DOP853",
                    rtol=rtol, atol=rtol * 1e-3)
    if not sol.success:
        raise RuntimeError(f"moment integration failed: {sol.message}")
    y = sol.y[:, -1] * scale
    return GaussianState(y[0], y[1], y[2], initial.frame, initial.hbar)


def coherence_from_covariance(state: GaussianState) -> tuple[float, float]:
    """Coherence length and position spread of a Gaussian state.

    xi = (hbar/2) sqrt(Vxx / det V), delta_x = sqrt(Vxx).
    """
    xi = 0.5 * state.hbar * math.sqrt(state.Vxx / state.determinant)
    return xi, math.sqrt(state.Vxx)


def density_matrix(state: GaussianState, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """Unnormalised position-space density matrix rho(x, x') of the state."""
    X = 0.5 * (x + xp)
    D = x - xp
    h = state.hbar
    cond = state.determinant / state.Vxx
    return np.exp(-X**2 / (2 * state.Vxx) - cond * D**2 / (2 * h**2)
                  + 1j * state.Vxp * X * D / (h * state.Vxx))


def coherence_numerical_oracle(state: GaussianState, grid_extent: float = 10.0,
                               grid_points: int = 512) -> float:
    """Coherence length by direct quadrature over a sampled density matrix.

    Parameters
    ----------
    grid_extent : float
        Half-width of the square (x, x') grid in units of sqrt(Vxx).
    grid_points : int
        Samples per axis.

    Raises
    ------
    ValueError
        If the grid cannot resolve the coherence length. The spacing scales
        with sqrt(Vxx), so strongly mixed states need about 2n+1 times more
        points than a pure one.
    """
    if grid_extent < 8 or grid_points < 256:
        raise ValueError("need grid_extent >= 8 standard deviations and >= 256 points")
    x = np.linspace(-grid_extent, grid_extent, grid_points) * math.sqrt(state.Vxx)
    xx, xxp = np.meshgrid(x, x, indexing="ij")
    w2 = np.abs(density_matrix(state, xx, xxp)) ** 2
    num = np.trapezoid(np.trapezoid(w2 * 0.5 * (xx - xxp) ** 2, x), x)
    den = np.trapezoid(np.trapezoid(w2, x), x)
    xi = math.sqrt(num / den)
    # the off-diagonal decay must span at least half a cell to be sampled
    if xi < 0.5 * (x[1] - x[0]):
        raise ValueError("coherence length is below the grid spacing; raise grid_points")
    return xi


def rates_from_experiment(zp: float, n: float, Q_eff: float, fb_fraction: float,
                          Omega: float, mass_like: float) -> DiffusionRates:
    """Diffusion rates reproducing a measured steady state.

    The total variance zp^2 (2n+1) is split into an imprinted part
    ``fb_fraction`` (position diffusion) and the remainder (momentum
    diffusion), with D_m = 0.
    """
    if not 0 <= fb_fraction <= 1:
        raise ValueError("fb_fraction must lie in [0, 1]")
    g = Omega / Q_eff
    vxx = zp**2 * (2 * n + 1)
    a = (1 - fb_fraction) * vxx
    return DiffusionRates(a * mass_like**2 * Omega**2 * g, 0.0, fb_fraction * vxx * g,
                          g, Omega, mass_like)
