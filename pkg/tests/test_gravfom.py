import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtorsion import gravfom as gf
from mgtorsion.physcore import CONSTANTS

ORACLE_A = (0.25, 0.5, 1.0, 2.0, 10.0)


def _f2d_mpmath(a):
    mpmath.mp.dps = 30
    f = lambda u: mpmath.besselj(1, u) ** 2 * mpmath.exp(-2 * a * u)
    return float(16 * mpmath.quadosc(f, [0, mpmath.inf], period=mpmath.pi))


# -- geometry factors

def test_closed_forms():
    assert gf.geometry_factor(2.0, gf.G3D) == 0.125
    assert gf.geometry_factor(0.25, gf.G1D) == pytest.approx(1 / (0.0625 * math.sqrt(1.0625)), rel=1e-15)
    assert gf.geometry_factor(0.25, gf.G1D) == pytest.approx(15.52, rel=1e-3)


@pytest.mark.parametrize("a", [0.05, 0.25, 1.0, 10.0])
def test_disk_factor_against_mpmath(a):
    assert gf.geometry_factor(a, gf.G2D) == pytest.approx(_f2d_mpmath(a), rel=1e-6)


def test_disk_factor_large_separation():
    assert gf.geometry_factor(10.0, gf.G2D) == pytest.approx(1e-3, rel=0.01)


@pytest.mark.parametrize("g", gf.GEOMETRIES)
def test_point_like_limit(g):
    assert gf.geometry_factor(100.0, g) * 100.0**3 == pytest.approx(1.0, rel=0.01)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.03, 50.0), r=st.floats(1.05, 3.0), g=st.sampled_from(gf.GEOMETRIES))
def test_factors_strictly_decreasing(a, r, g):
    assert gf.geometry_factor(a * r, g) < gf.geometry_factor(a, g)


@given(a=st.floats(1e-3, 1e3))
def test_rods_below_points(a):
    assert gf.geometry_factor(a, gf.G1D) <= gf.geometry_factor(a, gf.G3D)
    assert gf.geometry_factor(a, gf.G1D) * a**3 == pytest.approx(a / math.sqrt(1 + a * a), rel=1e-12)


@pytest.mark.parametrize("a", [0.05, 1.0, 20.0])
def test_disk_quadrature_tolerance_convergence(a):
    f1 = gf.geometry_factor(a, gf.G2D, 1e-6)
    f2 = gf.geometry_factor(a, gf.G2D, 5e-7)
    assert abs(f2 - f1) < 1e-6 * f1


def test_geometry_input_checks():
    with pytest.raises(ValueError):
        gf.geometry_factor(0.0, gf.G1D)
    with pytest.raises(ValueError):
        gf.geometry_factor(1.0, "g4D")
    with pytest.raises(ValueError):
        gf.force_gradient(1.0, 1.0, -1.0, gf.G3D)


# -- force gradients

@given(m=st.floats(1e-9, 1e3), L=st.floats(1e-4, 1.0), d=st.floats(1e-4, 1.0))
def test_points_ignore_size(m, L, d):
    assert gf.force_gradient(m, L, d, gf.G3D) == pytest.approx(2 * CONSTANTS.G * m * m / d**3, rel=1e-12)


def test_pendulum_pair_gradient():
    assert gf.force_gradient(1e-6, 2e-3, 0.5e-3, gf.G1D) == pytest.approx(2.6e-13, rel=0.01)


def test_rods_far_apart_point_like():
    g = gf.force_gradient(1.0, 1.0, 100.0, gf.G1D)
    assert g == pytest.approx(2 * CONSTANTS.G / 100.0**3, rel=0.01)


@pytest.mark.parametrize("g", [gf.G1D, gf.G2D, gf.G3D])
@pytest.mark.parametrize("a", ORACLE_A)
def test_brute_force_oracle(g, a):
    closed = gf.force_gradient(1e-6, 1.0, a, g)
    res = gf.brute_force_gradient(1e-6, 1.0, a, g)
    assert res.grad_F == pytest.approx(closed, rel=0.01)
    assert res.error < 0.01 * res.grad_F
    tight = {gf.G1D: 0.005, gf.G2D: 0.01, gf.G3D: 0.001}[g]
    assert abs(res.grad_F / closed - 1) < tight


def test_brute_force_preconditions():
    with pytest.raises(ValueError):
        gf.brute_force_gradient(1.0, 1.0, 1.0, gf.G1D, 32)


# -- eta

def test_this_work_eta():
    grad = gf.force_gradient(1e-6, 2e-3, 0.5e-3, gf.G1D)
    r = gf.eta(1.2e-18, grad, 2 * math.pi * 2.9e-5)
    assert r.eta == pytest.approx(4.4e-6, rel=0.02)
    assert 5e-6 / 1.4 <= r.eta <= 5e-6 * 1.4


def test_ground_state_identity():
    r = gf.eta(2e-15, 1e-12, 1.0)
    assert r.eta == r.eta_zp
    assert r.eta**2 == pytest.approx(r.ent_rate_ground / (2 * r.thermal_decoherence), rel=1e-12)


@given(xi=st.floats(1e-20, 1e-10), k=st.floats(0.01, 100.0))
def test_eta_linear_in_xi_and_rescaling(xi, k):
    a = gf.eta(xi, 1e-12, 1.0)
    assert gf.eta(k * xi, 1e-12, 1.0).eta == pytest.approx(k * a.eta, rel=1e-12)
    assert gf.eta(k * xi, 1e-12 / k**2, 1.0).eta == pytest.approx(a.eta, rel=1e-12)


def test_eta_below_ground_value_when_xi_small():
    r = gf.eta(1e-18, 1e-12, 1.0, x_zp=1e-15)
    assert r.eta <= r.eta_zp


def test_eta_rejects_nonpositive():
    with pytest.raises(ValueError):
        gf.eta(0.0, 1.0, 1.0)


# -- platform table

def test_shipped_table_ranking():
    rows = gf.platform_table(gf.load_platforms())
    assert len(rows) == 14 and all(r.error is None for r in rows)
    labels = [r.record.label for r in rows]
    assert labels[0] == "l) LIGO pendulums" and labels[1] == "This work"
    this = rows[1]
    assert 5e-6 / 1.4 <= this.result.eta <= 5e-6 * 1.4
    assert this.x_zp_ratio == pytest.approx(1.0, rel=0.10)
    etas = [r.result.eta for r in rows]
    assert etas == sorted(etas, reverse=True)


def test_alternate_damping_rows_improve():
    rows = {r.record.label: r for r in gf.platform_table(gf.load_platforms())}
    for label in ("j) pendulum", "l) LIGO pendulums"):
        assert rows[label].eta_alt > rows[label].result.eta


def test_row_errors_do_not_abort(tmp_path):
    data = gf.load_platforms()
    bad = dict(data[0], label="too close", d=1e-5)
    unknown = dict(data[1], label="typo", colour="red")
    rows = gf.platform_table(data + [bad, unknown])
    assert len(rows) == 16
    errs = {r.record.label: r.error for r in rows if r.error}
    assert set(errs) == {"too close", "typo"}
    assert "50 um" in errs["too close"]
    assert rows[-1].error and rows[-2].error


def test_separation_exemption():
    rec = gf.PlatformRecord("x", 1.0, 1.0, 1.0, 1e-15, 1e-3, 1e-5, gf.G3D, separation_exempt=True)
    assert rec.d < gf.MIN_SEPARATION


def test_load_platforms_requires_array(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"rows": []}))
    with pytest.raises(ValueError):
        gf.load_platforms(p)
