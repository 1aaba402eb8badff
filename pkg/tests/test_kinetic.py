import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasovlab.errors import DomainError, SingularCharacteristicError, UsageError
from vlasovlab.kinetic import (
    DATA,
    DistributionField,
    Law,
    duhamel_evolve,
    evolve_vn_massive_prescribed,
    evolve_vn_massless,
    free_evolve,
    h1_trace,
    lifted_solution,
    make_datum,
    make_source,
)
from vlasovlab.waves import RadialMode3, WaveField

WAVE = WaveField(3, (RadialMode3(0.05, 3.0, 0.5),))


@pytest.mark.parametrize("name", sorted(DATA))
@pytest.mark.parametrize("n", [1, 2, 3])
def test_catalog_data_instantiate(name, n):
    d = make_datum(name, n)
    val = d(np.zeros((1, n)), np.ones((1, n)))
    assert np.all(np.isfinite(val))


def test_datum_errors():
    with pytest.raises(UsageError):
        make_datum("nope", 3)
    with pytest.raises(UsageError):
        make_datum("gaussian-xv", 3, width=2.0)
    with pytest.raises(UsageError):
        make_datum("gaussian-xv", 5)


def test_free_evolve_rest_particle_and_gaussian():
    F = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0))
    x = np.array([[0.3, 0.1, -0.2]])
    assert free_evolve(F, [7.0], x, np.zeros((1, 3)))[0] == pytest.approx(math.exp(-0.14))
    val = free_evolve(F, [2.0], np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))[0]
    assert val == pytest.approx(math.exp(-(2 / math.sqrt(2)) ** 2 - 1))


@given(t=st.floats(0.0, 20.0), s=st.floats(-5.0, 5.0))
@settings(max_examples=30, deadline=None)
def test_free_solution_constant_along_characteristics(t, s):
    F = DistributionField(make_datum("shell-in-v", 2), Law.free(0.0))
    x, v = np.array([[0.4, -0.3]]), np.array([[0.6, 0.8]])
    a = F([t], x, v)[0]
    b = F([t + s + 20.0], x + (s + 20.0) * v, v)[0]
    assert a == pytest.approx(b, rel=1e-10, abs=1e-300)


def test_duhamel_examples():
    v = np.array([[0.5, 0.0, 0.0]])
    g = math.exp(-0.25)
    assert duhamel_evolve(make_source("zero", 3), 1.0, [2.0], np.zeros((1, 3)), v)[0] == 0.0
    assert duhamel_evolve(make_source("velocity-gaussian", 3), 1.0, [3.0], np.zeros((1, 3)), v)[0] == \
        pytest.approx(3.0 * g, rel=1e-9)
    assert duhamel_evolve(make_source("time-linear", 3), 1.0, [2.0], np.zeros((1, 3)), v)[0] == \
        pytest.approx(2.0 * g, rel=1e-9)


def test_lifted_solution_translation_closed_form():
    F = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0))
    t, x, v = np.array([1.0]), np.array([[0.3, 0.2, 0.0]]), np.array([[0.4, 0.0, 0.0]])
    x0 = x - t[:, None] * v / math.sqrt(1.16)
    expected = -2.0 * x0[0, 0] * F(t, x, v)[0]
    assert lifted_solution(F, ("dx1",), t, x, v)[0] == pytest.approx(expected, rel=1e-10)
    assert lifted_solution(F, (), t, x, v)[0] == pytest.approx(F(t, x, v)[0])


def test_lifted_boost_routes_agree():
    F = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0))
    t, x, v = np.array([1.3]), np.array([[0.3, -0.2, 0.5]]), np.array([[0.4, 0.1, -0.3]])
    a = lifted_solution(F, ("B1^",), t, x, v, route="footpoint")[0]
    b = lifted_solution(F, ("B1^",), t, x, v, route="direct", method="fd")[0]
    assert a == pytest.approx(b, rel=1e-6, abs=1e-9)


def test_vn_massless_zero_wave_is_free():
    d = make_datum("shell-in-v", 3)
    t, x, v = np.array([2.0, 4.0]), np.array([[0.5, 0, 0], [1, 1, 0]]), np.array([[1.0, 0, 0], [0, 0.5, 0.5]])
    vals, rec = evolve_vn_massless(WaveField(3, ()), d, t, x, v)
    free = DistributionField(d, Law.free(0.0))(t, x, v)
    assert np.allclose(vals, free, rtol=1e-9)
    assert np.allclose(rec.factor, 1.0)


def test_vn_massless_direction_preserved_and_self_convergent():
    d = make_datum("shell-in-v", 3)
    t, x, v = np.array([5.0]), np.array([[1.0, 0.5, 0.0]]), np.array([[0.6, 0.0, 0.8]])
    vals, rec = evolve_vn_massless(WAVE, d, t, x, v, rtol=1e-9, atol=1e-9)
    ref, _ = evolve_vn_massless(WAVE, d, t, x, v, rtol=1e-10, atol=1e-10)
    u0 = rec.foot_v[0] / np.linalg.norm(rec.foot_v[0])
    assert np.allclose(u0, v[0], atol=1e-9)
    assert vals[0] == pytest.approx(ref[0], rel=1e-7)


def test_vn_massless_rejects_zero_velocity():
    with pytest.raises(SingularCharacteristicError):
        evolve_vn_massless(WAVE, make_datum("shell-in-v", 3), [1.0], [[0, 0, 0]], [[0, 0, 0]])


def test_vn_massive_zero_wave_and_self_convergence():
    d = make_datum("gaussian-xv", 3)
    t, x, v = np.array([4.0]), np.array([[1.0, 0.0, 0.5]]), np.array([[0.2, -0.1, 0.3]])
    F0 = DistributionField(d, Law.free(1.0), "H1")
    vals, rec = evolve_vn_massive_prescribed(WaveField(3, ()), d, t, x, v, m=1.0)
    assert vals[0] == pytest.approx(F0(t, x, v)[0], rel=1e-8)
    assert rec.surface_residual("H1")[0] < 1e-10
    a, _ = evolve_vn_massive_prescribed(WAVE, d, t, x, v, m=1.0, rtol=1e-9, atol=1e-9)
    b, _ = evolve_vn_massive_prescribed(WAVE, d, t, x, v, m=1.0, rtol=1e-10, atol=1e-10)
    assert a[0] == pytest.approx(b[0], rel=1e-7)


def test_vn_massive_domain():
    with pytest.raises(DomainError):
        evolve_vn_massive_prescribed(WAVE, make_datum("gaussian-xv", 3), [1.0], [[1.0, 0, 0]], [[0, 0, 0]])


def test_h1_trace_support_certificate():
    F = DistributionField(make_datum("bump-compact-xv", 3), Law.free(1.0))
    trace, cert = h1_trace(F, samples=1000)
    assert cert["max_abs"] == 0.0
    R = cert["R"]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    x *= ((R + 0.1 + rng.uniform(0, 3, 200)) / np.linalg.norm(x, axis=1))[:, None]
    t = np.sqrt(1.0 + np.sum(x * x, axis=1))
    v = rng.normal(size=(200, 3))
    assert np.all(trace(t, x, v) == 0.0)
    zero, cert0 = h1_trace(DistributionField(make_datum("zero", 3), Law.free(1.0)))
    assert zero.is_zero or cert0["max_abs"] == 0.0
