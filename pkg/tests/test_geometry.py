import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasovlab.errors import DomainError, UsageError
from vlasovlab.geometry import (
    PhasePoint,
    QuadratureSpec,
    axis_frame,
    build_leaf,
    from_pseudo_cartesian,
    gauss_panels,
    hyperboloid_normal,
    hyperboloid_rho,
    mass_shell_v0,
    minkowski_inner,
    pseudo_cartesian,
    sphere_area,
    sphere_rule,
)

finite = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)


def test_mass_shell_energy():
    assert mass_shell_v0(0, (3.0, 4.0)) == 5.0
    assert mass_shell_v0(1, (0.0, 0.0, 0.0)) == 1.0
    with pytest.raises(DomainError):
        mass_shell_v0(0, (0.0, 0.0))
    with pytest.raises(UsageError):
        mass_shell_v0(-1, (1.0,))


def test_phase_point_validation():
    p = PhasePoint(1.0, (1.0, 2.0), (3.0, 4.0))
    assert p.n == 2 and p.v0 == 5.0
    with pytest.raises(DomainError):
        PhasePoint(0.0, (1.0,), (0.0,))
    with pytest.raises(UsageError):
        PhasePoint(0.0, (1.0, 2.0), (1.0,))
    with pytest.raises(UsageError):
        PhasePoint(0.0, (0.0,) * 5, (1.0,) * 5)


def test_minkowski_signature():
    assert minkowski_inner((1, 0, 0), (1, 0, 0)) == -1.0
    assert minkowski_inner((0, 1, 0), (0, 1, 0)) == 1.0


@given(t=st.floats(1.0, 50.0), x=st.lists(finite, min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_hyperboloid_normal_is_unit_timelike(t, x):
    x = np.array(x)
    t = t + np.linalg.norm(x)
    nu = hyperboloid_normal(t, x)
    assert minkowski_inner(nu, nu) == pytest.approx(-1.0, rel=1e-9)


@given(y0=st.floats(0.5, 20.0), y=st.lists(finite, min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_pseudo_cartesian_round_trip(y0, y):
    t, x = from_pseudo_cartesian(y0, y)
    rho, x2 = pseudo_cartesian(t, x)
    assert rho == pytest.approx(y0, rel=1e-10)
    assert np.allclose(x2, y)


def test_rho_outside_cone_rejected():
    with pytest.raises(DomainError):
        hyperboloid_rho(1.0, (2.0, 0.0))


@pytest.mark.parametrize("k, area", [(1, 2 * math.pi), (2, 4 * math.pi), (3, 2 * math.pi ** 2)])
def test_sphere_area(k, area):
    assert sphere_area(k) == pytest.approx(area)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sphere_rule_integrates_polynomials(n):
    dirs, w = sphere_rule(n, 16, 32)
    assert np.sum(w) == pytest.approx(sphere_area(n - 1), rel=1e-12)
    # int omega_1^2 = area / n
    assert np.sum(w * dirs[:, 0] ** 2) == pytest.approx(sphere_area(n - 1) / n, rel=1e-12)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)


def test_gauss_panels_exactness():
    x, w = gauss_panels([0.0, 1.0, 3.0], 4)
    assert np.sum(w * x ** 7) == pytest.approx(3.0 ** 8 / 8)


@given(st.lists(finite, min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_axis_frame_maps_e1(a):
    a = np.array(a)
    Q = axis_frame(a)
    assert np.allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    if np.linalg.norm(a) > 1e-8:
        assert np.allclose(Q[:, 0], a / np.linalg.norm(a), atol=1e-12)


def test_quadrature_spec_validation_and_json():
    spec = QuadratureSpec(x_radial=10)
    assert QuadratureSpec.from_dict(__import__("json").loads(spec.to_json())) == spec
    assert spec.refined(2).x_radial == 20
    with pytest.raises(UsageError):
        QuadratureSpec(v_polar=1)


@pytest.mark.parametrize("kind, value", [("fixed_time", 2.0), ("hyperboloid", 2.0)])
def test_leaf_integrates_gaussian(kind, value):
    spec = QuadratureSpec(x_radial=40, x_panels=2)
    leaf = build_leaf(kind, value, 12.0, spec, n=3)
    if kind == "fixed_time":
        got = leaf.integrate(np.exp(-leaf.r ** 2))
        assert got == pytest.approx(math.pi ** 1.5, rel=1e-10)
    else:
        # int_{H_rho} (t/rho) g(x) dmu = int g dx for the pseudo-Cartesian measure
        got = leaf.integrate(leaf.t / value * np.exp(-leaf.r ** 2))
        assert got == pytest.approx(math.pi ** 1.5, rel=1e-8)


def test_leaf_rejects_bad_input():
    with pytest.raises(UsageError):
        build_leaf("hyperboloid", 0.5, 3.0)
    with pytest.raises(UsageError):
        build_leaf("slab", 1.0, 3.0)
