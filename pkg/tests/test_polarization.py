import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvphoto.polarization import (
    CHARACTERS,
    IRREPS,
    PolarizationGeometry,
    absorption_strength,
    allowed_axes,
    contrast_curve,
    decompose,
    fit_polarization,
    product,
    selection_table,
)

THETA = np.linspace(0.0, 2 * math.pi, 72, endpoint=False)
IN_PLANE_90 = PolarizationGeometry.in_plane(math.pi / 2)
ALONG = PolarizationGeometry.along_beam()


def unit(v):
    v = np.asarray(v, dtype=float)
    return tuple(v / np.linalg.norm(v))


def test_character_table_orthogonality():
    sizes = np.array([1, 2, 3])
    for a in IRREPS:
        for b in IRREPS:
            inner = np.sum(sizes * CHARACTERS[a] * CHARACTERS[b]) / 6
            assert inner == (1 if a == b else 0)


def test_products():
    assert product("A1", "E") == {"E": 1}
    assert product("E", "E") == {"A1": 1, "A2": 1, "E": 1}
    assert product("A2", "A2") == {"A1": 1}
    assert decompose([3, 0, 1]) == {"A1": 1, "E": 1}  # vector representation


def test_allowed_axes_examples():
    assert allowed_axes("E", "A1") == {"x", "y"}
    assert allowed_axes("A1", "A1") == {"z"}
    assert allowed_axes("A2", "A1") == frozenset()
    assert allowed_axes("E", "E") == {"x", "y", "z"}
    with pytest.raises(ValueError):
        allowed_axes("B1", "A1")


@pytest.mark.parametrize("a", IRREPS)
@pytest.mark.parametrize("b", IRREPS)
def test_allowed_axes_symmetric(a, b):
    assert allowed_axes(a, b) == allowed_axes(b, a)


def test_selection_table_covers_six_pairs():
    table = selection_table()
    assert len(table) == 6
    pairs = {(r["upper"], r["lower"]) for r in table}
    assert ("A1", "E") in pairs or ("E", "A1") in pairs
    for row in table:
        assert row["allowed_axes"] == sorted(allowed_axes(row["upper"], row["lower"]))


def test_geometry_validation():
    with pytest.raises(ValueError):
        PolarizationGeometry(z=(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        PolarizationGeometry(z=(1.0, 0.0, 0.0), reference=(0.0, 0.0, 1.0))
    assert ALONG.phi_nv is None
    assert IN_PLANE_90.phi_nv == pytest.approx(math.pi / 2)


def test_strength_along_beam_is_one():
    np.testing.assert_allclose(absorption_strength({"x", "y"}, ALONG, THETA), 1.0, atol=1e-15)


def test_strength_zero_along_nv_axis():
    assert absorption_strength({"x", "y"}, IN_PLANE_90, math.pi / 2) == pytest.approx(0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
def test_strength_in_plane_is_sin_squared(phi_nv, theta):
    g = PolarizationGeometry.in_plane(phi_nv)
    assert absorption_strength({"x", "y"}, g, theta) == pytest.approx(
        math.sin(theta - phi_nv) ** 2, abs=1e-12)
    assert absorption_strength({"z"}, g, theta) == pytest.approx(
        math.cos(theta - phi_nv) ** 2, abs=1e-12)


vectors = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 0.1)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
def test_strength_independent_of_transverse_basis(z, theta, angle):
    g = PolarizationGeometry(z=unit(z))
    base = absorption_strength({"x", "y"}, g, theta)
    assert absorption_strength({"x", "y"}, g, theta, basis_angle=angle) == pytest.approx(
        base, abs=1e-12)
    assert 0.0 <= base <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(0.0, 0.99), st.floats(0.0, 2 * math.pi))
def test_curve_period_pi(z, c, theta):
    g = PolarizationGeometry(z=unit(z))
    a = contrast_curve({"x", "y"}, g, [theta], c)[0, 1]
    b = contrast_curve({"x", "y"}, g, [theta + math.pi], c)[0, 1]
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, math.pi), st.floats(0.0, 0.99))
def test_curve_mean(phi_nv, c):
    curve = contrast_curve({"x", "y"}, PolarizationGeometry.in_plane(phi_nv), THETA, c)
    assert np.mean(curve[:, 1]) == pytest.approx((1 - c) / 2 + c, abs=1e-9)


def test_curve_examples():
    np.testing.assert_allclose(contrast_curve({"x", "y"}, IN_PLANE_90, THETA, 1.0)[:, 1], 1.0)
    flat = contrast_curve({"x", "y"}, ALONG, THETA, 0.2)[:, 1]
    assert np.ptp(flat) < 1e-12
    curve = contrast_curve({"x", "y"}, IN_PLANE_90, THETA, 0.2)
    minima = np.argsort(curve[:, 1])[:2]
    np.testing.assert_allclose(sorted(np.degrees(curve[minima, 0])), [90.0, 270.0])
    np.testing.assert_allclose(curve[minima, 1], 0.2, atol=1e-15)
    with pytest.raises(ValueError):
        contrast_curve({"x", "y"}, ALONG, THETA, 1.5)


def test_fit_exact_recovery():
    R = contrast_curve({"x", "y"}, IN_PLANE_90, THETA, 0.2)[:, 1]
    res = fit_polarization(THETA, R)
    assert res.converged
    assert math.degrees(res.value("phi_nv_rad")) == pytest.approx(90.0, abs=1e-4)
    assert res.value("amplitude") == pytest.approx(0.8, abs=1e-9)
    assert res.value("offset") == pytest.approx(0.2, abs=1e-9)
    assert res.extra["preferred"] == "sin2"


@pytest.mark.parametrize("phi_deg", [0.0, 30.0, 135.0, 179.0])
def test_fit_phase_wraps_to_half_turn(phi_deg):
    g = PolarizationGeometry.in_plane(math.radians(phi_deg + 180.0))
    R = contrast_curve({"x", "y"}, g, THETA, 0.1)[:, 1]
    phi = math.degrees(fit_polarization(THETA, R).value("phi_nv_rad"))
    assert 0.0 <= phi < 180.0
    assert phi == pytest.approx(phi_deg, abs=1e-4)


def test_fit_constant_data():
    R = contrast_curve({"x", "y"}, ALONG, THETA, 0.2)[:, 1]
    res = fit_polarization(THETA, R)
    assert res.value("amplitude") < 1e-9
    assert res.extra["preferred"] == "constant"
    noisy = 0.6 + 0.02 * np.random.default_rng(5).standard_normal(THETA.size)
    res = fit_polarization(THETA, noisy, np.full(THETA.size, 0.02))
    assert res.extra["preferred"] == "constant"


def test_fit_noise_monte_carlo():
    clean = contrast_curve({"x", "y"}, IN_PLANE_90, THETA, 0.2)[:, 1]
    rng = np.random.default_rng(42)
    good = 0
    for _ in range(100):
        R = clean + 0.02 * rng.standard_normal(THETA.size)
        phi = math.degrees(fit_polarization(THETA, R, np.full(THETA.size, 0.02))
                           .value("phi_nv_rad"))
        good += abs(phi - 90.0) <= 3.0
    assert good >= 95


def test_fit_input_checks():
    with pytest.raises(ValueError, match="5 points"):
        fit_polarization(THETA[:4], np.ones(4))
    with pytest.raises(ValueError, match="180"):
        few = np.linspace(0, math.pi / 2, 10)
        fit_polarization(few, np.ones(10))
