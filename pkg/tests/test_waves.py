import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasovlab.errors import DomainError, UsageError
from vlasovlab.waves import (
    WAVES,
    PlaneMode,
    RadialMode3,
    WaveField,
    box_residual,
    eval_phi_partials,
    eval_Z_alpha_phi,
    make_wave,
    null_decomposition,
    transport_of_phi,
    wave_decay_checks,
    wave_energy_hyperboloid,
    wave_energy_slab,
)

PLANE = WaveField(3, (PlaneMode(0.7, (1.0, 2.0, 2.0), 0.3),))
RADIAL = WaveField(3, (RadialMode3(1.0, 3.0, 0.5),))


def test_plane_mode_dispersion_and_dt():
    mode = PLANE.modes[0]
    assert mode.omega == 3.0
    t, x = np.array([0.4]), np.array([[0.1, -0.2, 0.3]])
    phase = np.dot(mode.xi, x[0]) - 3.0 * 0.4 + 0.3
    got = eval_phi_partials(PLANE, (1, 0, 0, 0), t, x)[0]
    assert got == pytest.approx(0.7 * 3.0 * math.sin(phase), rel=1e-12)


@pytest.mark.parametrize("wf", [PLANE, RADIAL], ids=["plane", "radial"])
def test_box_residual_small(wf, rng):
    t = rng.uniform(0.0, 6.0, 1000)
    x = rng.normal(size=(1000, 3)) * 2.0
    box, scale = box_residual(wf, t, x)
    assert np.max(np.abs(box) / (1.0 + scale)) < 1e-10


def test_radial_origin_limit():
    mode = RADIAL.modes[0]
    t = np.array([2.0, 3.2])
    at0 = RADIAL(t, np.zeros((2, 3)))
    assert np.allclose(at0, -2.0 * mode.profile(t, 1), rtol=1e-12)
    # smooth across the series/closed-form switch at r = width
    r = np.array([0.5 - 1e-9, 0.5 + 1e-9])
    x = np.stack([r, 0 * r, 0 * r], axis=1)
    v = RADIAL(np.array([2.5, 2.5]), x)
    assert v[0] == pytest.approx(v[1], rel=1e-7)


def test_Z_alpha_phi_scaling_on_plane_mode():
    t, x = np.array([0.9]), np.array([[0.4, 0.1, -0.5]])
    g = PLANE.gradient(t, x)[0]
    expected = 0.9 * g[0] + np.dot(x[0], g[1:])
    assert eval_Z_alpha_phi(PLANE, ("S",), t, x)[0] == pytest.approx(expected, rel=1e-12)
    assert eval_Z_alpha_phi(PLANE, (), t, x)[0] == pytest.approx(PLANE(t, x)[0])


def test_Z_alpha_phi_double_boost_finite_differences():
    t0, x0 = 2.0, np.array([0.7, 0.2, -0.1])
    exact = eval_Z_alpha_phi(RADIAL, ("B1", "B1"), [t0], [x0])[0]

    def B1(fn, h=1e-4):
        def g(t, x):
            e = np.array([1.0, 0.0, 0.0])
            dt = (fn(t + h, x) - fn(t - h, x)) / (2 * h)
            dx = (fn(t, x + h * e) - fn(t, x - h * e)) / (2 * h)
            return t * dx + x[0] * dt
        return g

    phi = lambda t, x: RADIAL(np.array([t]), np.array([x]))[0]
    fd = B1(B1(phi, 1e-3), 1e-3)(t0, x0)
    assert exact == pytest.approx(fd, rel=1e-5)


def test_transport_of_phi_rest_particle():
    t, x = np.array([1.3]), np.array([[0.2, 0.0, 0.1]])
    assert transport_of_phi(RADIAL, 1.0, t, x, np.zeros((1, 3)))[0] == pytest.approx(RADIAL.gradient(t, x)[0, 0])


@given(st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_null_decomposition_reconstructs(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.5, 10.0, 16)
    x = rng.normal(size=(16, 3)) + 0.1
    v = rng.normal(size=(16, 3))
    parts = null_decomposition(RADIAL, t, x, v)
    T0 = transport_of_phi(RADIAL, 0.0, t, x, v)
    scale = 1.0 + np.abs(RADIAL.gradient(t, x)).sum(axis=1) * np.linalg.norm(v, axis=1) * (1 + t)
    assert np.max(np.abs(sum(parts) - T0) / scale) < 1e-10


def test_null_decomposition_rejects_origin():
    with pytest.raises(DomainError):
        null_decomposition(RADIAL, [1.0], [[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]])


def test_energy_flux_identity():
    e1 = wave_energy_hyperboloid(RADIAL, 0, 1.0)
    e3 = wave_energy_hyperboloid(RADIAL, 0, 3.0)
    assert e1.energy == pytest.approx(e3.energy, rel=1e-6)
    assert e1.min_density >= 0.0
    assert wave_energy_hyperboloid(WaveField(3, ()), 1, 2.0).energy == 0.0


def test_calibration_sets_slab_energy():
    wf = RADIAL.calibrated(1e-2)
    assert wave_energy_slab(wf, 0.0) == pytest.approx(1e-2, rel=1e-8)


def test_decay_checks_zero_and_plane():
    t, x = np.array([5.0]), np.array([[1.0, 0.0, 0.0]])
    assert wave_decay_checks(WaveField(3, ()), 1, t, x) == (0.0, 0.0, 0.0)
    with pytest.raises(UsageError):
        wave_decay_checks(PLANE, 1, t, x)


@pytest.mark.parametrize("name", sorted(WAVES))
def test_wave_catalog_defaults(name):
    n = 3
    wf = make_wave(name, n)
    assert np.all(np.isfinite(wf(np.array([1.0]), np.array([[0.5, 0.0, 0.0]]))))
    defaults = WAVES[name][1]
    assert json.loads(json.dumps(defaults)) == defaults


def test_wave_catalog_errors():
    with pytest.raises(UsageError):
        make_wave("radial3-bump", 2)
    with pytest.raises(UsageError):
        make_wave("nope", 3)
    with pytest.raises(UsageError):
        make_wave("plane-packet", 3, bogus=1)
