import math

import numpy as np
import pytest
from scipy import integrate

from vlasovlab.errors import DomainError, UsageError
from vlasovlab.geometry import QuadratureSpec
from vlasovlab.kinetic import DistributionField, Law, make_datum
from vlasovlab.moments import (
    MomentSpec,
    average_commutation_residual,
    chi_m,
    coercivity_gaps,
    divergence_residual,
    mass_average,
    rho_0,
    rho_m,
    stress_energy,
    velocity_average,
)


@pytest.fixture(scope="module")
def gauss3():
    return DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0))


def test_zero_field_average():
    F = DistributionField(make_datum("zero", 3), Law.free(1.0))
    assert rho_m(F, [1.0], [[0.0, 0.0, 0.0]])[0] == 0.0


def test_rho_m_radial_oracle(gauss3):
    # at t = 0, x = 0: 4 pi int_0^inf e^{-r^2} sqrt(1 + r^2) r^2 dr
    ref = 4 * math.pi * integrate.quad(lambda r: math.exp(-r * r) * math.sqrt(1 + r * r) * r * r,
                                       0, np.inf, epsabs=1e-14)[0]
    fine = QuadratureSpec(v_radial=48)
    assert rho_m(gauss3, [0.0], [[0.0, 0.0, 0.0]], quad=fine)[0] == pytest.approx(ref, rel=1e-8)
    # the default rule is accurate to a few parts in 1e6 here
    assert rho_m(gauss3, [0.0], [[0.0, 0.0, 0.0]])[0] == pytest.approx(ref, rel=1e-5)


def test_chi_at_origin_equals_rho(gauss3):
    t = np.array([1.5, 3.0])
    x = np.zeros((2, 3))
    assert np.allclose(chi_m(gauss3, t, x), rho_m(gauss3, t, x), rtol=1e-12)


def test_chi_requires_inside_cone(gauss3):
    with pytest.raises(DomainError):
        chi_m(gauss3, [1.0], [[2.0, 0.0, 0.0]])


def test_coercivity_margins(gauss3, rng):
    t = rng.uniform(1.0, 5.0, 8)
    x = rng.normal(size=(8, 3)) * 0.3 * t[:, None]
    gaps = coercivity_gaps(gauss3, t, x)
    for key in ("mass", "cone"):
        assert np.all(gaps[key] >= -1e-10)


def test_stress_energy_symmetry_and_energy_density(gauss3):
    t, x = [1.0], [[0.2, -0.1, 0.3]]
    assert stress_energy(gauss3, 1, 2, t, x)[0] == stress_energy(gauss3, 2, 1, t, x)[0]
    assert stress_energy(gauss3, 0, 0, t, x)[0] == pytest.approx(rho_m(gauss3, t, x)[0], rel=1e-10)


@pytest.mark.parametrize("nu", [0, 1, 2])
def test_divergence_free(gauss3, nu):
    res = divergence_residual(gauss3, nu, [0.7, 1.4], [[0.2, 0.1, 0.0], [-0.3, 0.4, 0.2]])
    assert np.max(res) < 1e-5


@pytest.mark.parametrize("Z", ["dt", "dx2", "R12", "B1"])
def test_average_commutation_massive(gauss3, Z):
    res = average_commutation_residual(gauss3, Z, [0.8], [[0.3, -0.2, 0.1]])
    assert res[0] < 1e-5


def test_average_commutation_massless_scaling():
    F = DistributionField(make_datum("shell-in-v", 3), Law.free(0.0))
    assert average_commutation_residual(F, "S", [1.2], [[0.3, 0.1, -0.2]])[0] < 1e-5


def test_massless_n1_weight_rejected():
    F = DistributionField(make_datum("gaussian-xv", 1), Law.free(0.0))
    with pytest.raises(UsageError):
        velocity_average(F, MomentSpec(kind="dmu"), [1.0], [[0.0]])


@pytest.mark.parametrize("t", [0.5, 2.0, 4.0])
def test_rho0_positive_at_origin(t):
    F = DistributionField(make_datum("shell-in-v", 2), Law.free(0.0))
    val = rho_0(F, [t], [[0.0, 0.0]])[0]
    assert val > 0 and math.isfinite(val)


def test_mass_average_matches_chi_coercivity(gauss3):
    t, x = [2.0], [[0.5, 0.0, 0.0]]
    assert chi_m(gauss3, t, x, absolute=True)[0] >= 0.5 * mass_average(gauss3, t, x, absolute=True)[0]
