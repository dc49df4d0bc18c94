"""Gaussian-beam optical lever: propagation, Gouy phase and tilt sensitivity.

Each transverse axis is treated as an independent one-dimensional Gaussian
beam. Positions are measured along the unfolded optical axis from z = 0;
the pendulum is a plane at ``pendulum_position`` where a tilt theta adds a
linear phase of 2 theta k x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

HORIZONTAL, VERTICAL = "horizontal", "vertical"
AXES = (HORIZONTAL, VERTICAL)
SQRT_32PI = math.sqrt(32 * math.pi)


@dataclass(frozen=True)
class BeamState:
    """Gaussian beam on one axis, described by its waist in the z frame."""
    wavelength: float
    waist: float
    waist_position: float
    gouy_accumulated: float = 0.0
    axis: str = HORIZONTAL

    def __post_init__(self):
        if not (self.wavelength > 0 and self.waist > 0):
            raise ValueError("wavelength and waist must be positive")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")

    @property
    def rayleigh(self) -> float:
        return math.pi * self.waist**2 / self.wavelength

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength

    def spot(self, z):
        return self.waist * np.sqrt(1 + ((np.asarray(z) - self.waist_position) / self.rayleigh) ** 2)


@dataclass(frozen=True)
class Element:
    kind: str
    length: float | None = None
    focal_length: float | None = None
    axis: str | None = None

    def __post_init__(self):
        if self.kind == "free_space":
            if self.length is None or not self.length > 0:
                raise ValueError("free_space length must be positive")
        elif self.kind == "thin_lens":
            if self.focal_length is None or self.focal_length == 0 or not math.isfinite(self.focal_length):
                raise ValueError("thin_lens focal length must be finite and nonzero")
            if self.axis is not None and self.axis not in AXES:
                raise ValueError(f"lens axis must be one of {AXES} or omitted")
        else:
            raise ValueError(f"unknown element kind {self.kind!r}")

    def acts_on(self, axis: str) -> bool:
        return self.kind == "thin_lens" and (self.axis is None or self.axis == axis)


@dataclass(frozen=True)
class OpticalPrescription:
    """Ordered elements starting at z = 0; ``axis`` marks a cylindrical lens."""
    elements: tuple
    pendulum_position: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(
            e if isinstance(e, Element) else Element(**_element_kwargs(e)) for e in self.elements))
        if not 0 <= self.pendulum_position <= self.extent:
            raise ValueError("pendulum position must lie inside the prescription")

    @property
    def extent(self) -> float:
        return sum(e.length for e in self.elements if e.kind == "free_space")

    def lenses(self, axis: str) -> list[tuple[float, float]]:
        """(position, focal length) of lenses acting on ``axis``."""
        out, z = [], 0.0
        for e in self.elements:
            if e.kind == "free_space":
                z += e.length
            elif e.acts_on(axis):
                out.append((z, e.focal_length))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "OpticalPrescription":
        unknown = set(data) - {"elements", "pendulum_position"}
        if unknown:
            raise ValueError(f"unknown prescription keys {sorted(unknown)}")
        return cls(tuple(data["elements"]), float(data.get("pendulum_position", 0.0)))


def _element_kwargs(e: dict) -> dict:
    e = dict(e)
    kind = e.pop("type", e.pop("kind", None))
    allowed = {"length", "focal_length", "axis"}
    if set(e) - allowed:
        raise ValueError(f"unknown element keys {sorted(set(e) - allowed)}")
    return {"kind": kind, **e}


@dataclass(frozen=True)
class _Segment:
    start: float
    waist_position: float
    rayleigh: float
    waist: float
    gouy_offset: float


def _segments(beam: BeamState, prescription: OpticalPrescription) -> list[_Segment]:
    lam = beam.wavelength
    zw, zr = beam.waist_position, beam.rayleigh
    off = beam.gouy_accumulated
    segs = [_Segment(-math.inf, zw, zr, beam.waist, off)]
    for zl, f in prescription.lenses(beam.axis):
        q = complex(zl - zw, zr)
        q2 = 1.0 / (1.0 / q - 1.0 / f)
        gouy_before = off + math.atan((zl - zw) / zr)
        zw, zr = zl - q2.real, q2.imag
        off = gouy_before - math.atan((zl - zw) / zr)
        segs.append(_Segment(zl, zw, zr, math.sqrt(lam * zr / math.pi), off))
    return segs


def _locate(segs: list[_Segment], z: np.ndarray) -> np.ndarray:
    starts = np.array([s.start for s in segs])
    # a sample on a lens plane belongs to the downstream segment
    return np.searchsorted(starts, z, side="right") - 1


def propagate(beam: BeamState, prescription: OpticalPrescription, z_samples) -> np.ndarray:
    """Beam radius, wavefront radius and accumulated Gouy phase at each z.

    Returns
    -------
    ndarray, shape (n, 4)
        Columns z, w, R, gouy. R is inf at a waist.
    """
    z = np.atleast_1d(np.asarray(z_samples, dtype=float))
    if np.any(z < 0) or np.any(z > prescription.extent * (1 + 1e-12)):
        raise ValueError("z samples must lie within the prescription")
    segs = _segments(beam, prescription)
    idx = _locate(segs, z)
    zw = np.array([s.waist_position for s in segs])[idx]
    zr = np.array([s.rayleigh for s in segs])[idx]
    w0 = np.array([s.waist for s in segs])[idx]
    off = np.array([s.gouy_offset for s in segs])[idx]
    dz = z - zw
    w = w0 * np.sqrt(1 + (dz / zr) ** 2)
    with np.errstate(divide="ignore"):
        R = np.where(dz == 0, np.inf, dz * (1 + (zr / np.where(dz == 0, 1.0, dz)) ** 2))
    gouy = off + np.arctan(dz / zr)
    return np.column_stack((z, w, R, gouy))


def abcd(beam: BeamState, prescription: OpticalPrescription, z1: float, z2: float) -> np.ndarray:
    """Ray-transfer matrix on ``beam.axis`` from plane z1 to plane z2 > z1."""
    if z2 < z1:
        raise ValueError("z2 must not precede z1")
    M = np.eye(2)
    z = z1
    # planes sit on the downstream side of a lens, so a lens at z1 is already
    # applied and a lens at z2 is included
    for zl, f in prescription.lenses(beam.axis):
        if z1 < zl <= z2:
            M = np.array([[1.0, 0.0], [-1.0 / f, 1.0]]) @ np.array([[1.0, zl - z], [0.0, 1.0]]) @ M
            z = zl
    return np.array([[1.0, z2 - z], [0.0, 1.0]]) @ M


def _gouy_difference(beam, prescription, z_detect):
    zp = prescription.pendulum_position
    if z_detect < zp:
        raise ValueError("detector must be downstream of the pendulum")
    rows = propagate(beam, prescription, [zp, z_detect])
    return rows[1, 3] - rows[0, 3], rows[0, 1], rows[1, 1]


def sensitivity_max(wavelength: float, w_p: float) -> float:
    """Upper bound sqrt(32 pi) w_p / lambda of the tilt sensitivity."""
    return SQRT_32PI * w_p / wavelength


def tilt_sensitivity(beam: BeamState, prescription: OpticalPrescription, z_detect: float) -> float:
    """Split-detector tilt sensitivity S (per rad) at ``z_detect``."""
    dphi, wp, _ = _gouy_difference(beam, prescription, z_detect)
    return sensitivity_max(beam.wavelength, wp) * abs(math.sin(dphi))


def centroid_and_photons(beam: BeamState, prescription: OpticalPrescription, z_detect: float,
                         theta: float) -> tuple[float, float]:
    """Centroid displacement (m) for tilt ``theta`` and photons needed to resolve it."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    dphi, wp, wd = _gouy_difference(beam, prescription, z_detect)
    S = sensitivity_max(beam.wavelength, wp) * abs(math.sin(dphi))
    shift = S * theta * wd * math.sqrt(math.pi / 8)
    photons = math.inf if S == 0 else 1.0 / (S * theta) ** 2
    return shift, photons


def lever_response(beam: BeamState, prescription: OpticalPrescription, z_detect: float) -> float:
    """Geometric centroid response d<x>/dtheta = 2 B from the ray matrix."""
    return 2.0 * abcd(beam, prescription, prescription.pendulum_position, z_detect)[0, 1]


def _field_at(beam, prescription, z):
    """Complex beam parameter q at z."""
    segs = _segments(beam, prescription)
    s = segs[int(_locate(segs, np.array([z]))[0])]
    return complex(z - s.waist_position, s.rayleigh)


def split_detector_signal(beam: BeamState, prescription: OpticalPrescription, z_detect: float,
                          theta: float, grid_points: int = 512, gap: float = 0.0,
                          extent: float = 8.0) -> float:
    """Normalised split-detector difference (R - L)/(R + L) for tilt ``theta``.

    The tilted field at the pendulum is propagated to the detector with a
    directly summed Collins diffraction integral on Gauss-Legendre nodes.
    """
    zp = prescription.pendulum_position
    A, B, _, D = abcd(beam, prescription, zp, z_detect).ravel()
    if abs(B) < 1e-15:
        return 0.0
    k = beam.k
    qp = _field_at(beam, prescription, zp)
    wp = float(propagate(beam, prescription, [zp])[0, 1])
    wd = float(propagate(beam, prescription, [z_detect])[0, 1])
    x1, w1 = np.polynomial.legendre.leggauss(grid_points)
    x1, w1 = x1 * extent * wp, w1 * extent * wp
    half = grid_points // 2
    t, wt = np.polynomial.legendre.leggauss(half)
    xmax = extent * wd
    # right half [gap/2, xmax]; left half mirrored
    a0 = 0.5 * gap
    x2 = a0 + (t + 1) * 0.5 * (xmax - a0)
    w2 = wt * 0.5 * (xmax - a0)
    phase1 = -0.5j * k * x1**2 / qp + 2j * theta * k * x1 + 0.5j * k * A * x1**2 / B
    step = np.abs(np.diff(np.imag(phase1) - k * x1 * xmax / B)).max()
    if step > math.pi / 2:
        raise ValueError("grid too coarse for the diffraction integral")
    u1 = np.exp(phase1) * w1

    def intensity(x):
        kernel = np.exp(-1j * k * np.outer(x, x1) / B)
        return np.abs(kernel @ u1) ** 2

    right = intensity(x2) @ w2
    left = intensity(-x2) @ w2
    return float((right - left) / (right + left))


def split_detector_oracle(beam: BeamState, prescription: OpticalPrescription, z_detect: float,
                          theta: float = 1e-6, grid_points: int = 512, gap: float = 0.0) -> float:
    """Tilt sensitivity from a central difference of the numerical split signal."""
    if not 0 < theta <= 1e-4:
        raise ValueError("theta must lie in (0, 1e-4]")
    sp = split_detector_signal(beam, prescription, z_detect, theta, grid_points, gap)
    sm = split_detector_signal(beam, prescription, z_detect, -theta, grid_points, gap)
    return abs(sp - sm) / (2 * theta)


def scan_detector_plane(beam_h: BeamState, beam_v: BeamState, prescription_h: OpticalPrescription,
                        prescription_v: OpticalPrescription, z_grid) -> dict:
    """Per-axis spot size, tilt sensitivity and centroid response along z."""
    z = np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or z.size == 0 or np.any(np.diff(z) <= 0):
        raise ValueError("z grid must be strictly increasing")
    out = {"z_m": z}
    for tag, beam, presc in (("h", beam_h, prescription_h), ("v", beam_v, prescription_v)):
        rows = propagate(beam, presc, z)
        zp_row = propagate(beam, presc, [presc.pendulum_position])[0]
        dphi = rows[:, 3] - zp_row[3]
        S = sensitivity_max(beam.wavelength, zp_row[1]) * np.abs(np.sin(dphi))
        S = np.where(z >= presc.pendulum_position, S, np.nan)
        out[f"w_{tag}_m"] = rows[:, 1]
        out[f"S_{tag}"] = S
        out[f"centroid_{tag}_m_per_rad"] = S * rows[:, 1] * math.sqrt(math.pi / 8)
    return out


def find_optimal_detector(beam: BeamState, prescription: OpticalPrescription,
                          z_lo: float | None = None, z_hi: float | None = None) -> float:
    """First z downstream of the pendulum where the Gouy difference reaches pi/2 mod pi."""
    zp = prescription.pendulum_position
    z_lo = zp if z_lo is None else z_lo
    z_hi = prescription.extent if z_hi is None else z_hi
    g = lambda z: float(propagate(beam, prescription, [z])[0, 3])
    g0 = g(zp)
    lo, hi = g(z_lo) - g0, g(z_hi) - g0
    target = (math.floor((lo - math.pi / 2) / math.pi) + 1) * math.pi + math.pi / 2
    if target > hi:
        raise ValueError("no optimal detector plane in the given range")
    return optimize.brentq(lambda z: g(z) - g0 - target, z_lo, z_hi, xtol=1e-12, rtol=1e-12)


def load_setup(path) -> dict:
    """Read a two-axis optical setup (beams plus prescriptions) from JSON."""
    with open(path) as fh:
        data = json.load(fh)
    return setup_from_dict(data)


def setup_from_dict(data: dict) -> dict:
    allowed = {"wavelength", "pendulum_position", "beams", "elements", "label"}
    if set(data) - allowed:
        raise ValueError(f"unknown optics keys {sorted(set(data) - allowed)}")
    presc = OpticalPrescription(tuple(data["elements"]), float(data["pendulum_position"]))
    beams = {}
    for axis in AXES:
        b = data["beams"][axis]
        if set(b) - {"waist", "waist_position"}:
            raise ValueError(f"unknown beam keys {sorted(set(b) - {'waist', 'waist_position'})}")
        beams[axis] = BeamState(float(data["wavelength"]), float(b["waist"]),
                                float(b["waist_position"]), 0.0, axis)
    return {"beams": beams, "prescription": presc, "label": data.get("label", "")}
