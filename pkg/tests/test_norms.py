import numpy as np
import pytest

from vlasovlab.errors import UsageError
from vlasovlab.geometry import QuadratureSpec, build_leaf
from vlasovlab.kinetic import DistributionField, Law, h1_trace, make_datum
from vlasovlab.moments import mass_average, rho_m
from vlasovlab.norms import (
    NORM_QUAD,
    NormSpec,
    evaluate_norm,
    l2_hyperboloid,
    norm_EN_massive_vn,
    norm_ENq,
    norm_K,
    norm_P,
    norm_terms,
)
from vlasovlab.verify import CONSERVATION_QUAD

LIGHT = QuadratureSpec(x_radial=12, x_polar=6, x_fibre=8, v_radial=12, v_polar=6, v_fibre=8)
PANELED = CONSERVATION_QUAD


@pytest.fixture(scope="module")
def massless2():
    return DistributionField(make_datum("shell-in-v", 2), Law.free(0.0))


@pytest.fixture(scope="module")
def massive3():
    return DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0), "H1")


def test_zero_norms():
    Z0 = DistributionField(make_datum("zero", 2), Law.free(0.0))
    Z1 = DistributionField(make_datum("zero", 3), Law.free(1.0), "H1")
    assert norm_K(Z0, 1, 0.0).value == 0.0
    assert norm_P(Z1, 1, 1.0).value == 0.0
    assert norm_EN_massive_vn(Z1, 1, 1.0).value == 0.0
    assert l2_hyperboloid(Z1, (), 2.0) == 0.0


def test_family_mismatch(massless2, massive3):
    with pytest.raises(UsageError):
        norm_P(massless2, 0, 1.0)
    with pytest.raises(UsageError):
        norm_K(massive3, 0, 1.0)
    with pytest.raises(UsageError):
        norm_ENq(massive3, 0, 0, 1.0)


def test_k0_conservation_massless(massless2):
    vals = [norm_K(massless2, 0, t, PANELED).value for t in (0.0, 10.0)]
    assert vals[1] == pytest.approx(vals[0], rel=1e-8)


def test_p0_conservation_massive(massive3):
    vals = [norm_P(massive3, 0, r, PANELED).value for r in (1.0, 2.0, 4.0)]
    assert max(vals) - min(vals) < 1e-6 * max(vals)


def test_norm_K_order_one_refinement_stable(massless2):
    # derivatives of the shell profile converge slowly; 0.5% per doubling
    a = norm_K(massless2, 1, 0.0, NORM_QUAD).value
    b = norm_K(massless2, 1, 0.0, NORM_QUAD.refined(2)).value
    assert np.isfinite(a) and abs(a - b) < 5e-3 * b


def test_enq_collapse_and_monotone(massless2):
    k1 = norm_K(massless2, 1, 0.0, LIGHT).value
    e10 = norm_ENq(massless2, 1, 0, 0.0, LIGHT).value
    e11 = norm_ENq(massless2, 1, 1, 0.0, LIGHT).value
    assert e10 == pytest.approx(k1, rel=1e-12)
    assert e11 >= e10


def test_norm_P_monotone_in_order(massive3):
    p0 = norm_P(massive3, 0, 1.0, LIGHT).value
    p1 = norm_P(massive3, 1, 1.0, LIGHT).value
    assert p1 >= p0 > 0


def test_massive_vn_norm_dominates_P(massive3):
    en = norm_EN_massive_vn(massive3, 0, 1.0, LIGHT).value
    p0 = norm_P(massive3, 0, 1.0, LIGHT).value
    assert en >= p0


def test_evaluate_norm_dispatch(massless2):
    rep = evaluate_norm(massless2, NormSpec("K", 0, quad=LIGHT), 0.0)
    assert rep.value == pytest.approx(norm_K(massless2, 0, 0.0, LIGHT).value)


def test_norm_terms_orbits_count_all_terms():
    names = ["dt", "dx1", "dx2"]
    full = norm_terms(names, 2, 2, orbits=False)
    reduced = norm_terms(names, 2, 2, orbits=True)
    assert sum(m for _, _, m in reduced) == sum(m for _, _, m in full) == 1 + 3 + 9


def test_l2_cauchy_schwarz(massive3):
    rho = 2.0
    val = l2_hyperboloid(massive3, (), rho, quad=LIGHT)
    t = np.array([rho, np.sqrt(rho ** 2 + 1.0), np.sqrt(rho ** 2 + 4.0)])
    x = np.stack([np.sqrt(t ** 2 - rho ** 2), 0 * t, 0 * t], axis=1)
    assert val > 0
    sup = np.max(t / rho * mass_average(massive3, t, x, absolute=True))
    total = norm_P(massive3, 0, rho, LIGHT).value
    # chi_1(|f|) >= (1/2) int |f| dv/v0, so the integral of the average is at most 2 ||f||_P0
    assert val <= sup * 2.0 * total * (1 + 1e-6)


def test_h1_trace_mass_conservation():
    F = DistributionField(make_datum("bump-compact-xv", 3), Law.free(1.0))
    trace, cert = h1_trace(F, samples=200)
    T = cert["T"]
    spec = QuadratureSpec(
        x_radial=32, x_panels=4, x_polar=8, x_fibre=12, v_radial=48, v_panels=2, v_polar=16
    )
    lhs = norm_P(trace, 0, 1.0, spec).value
    leaf = build_leaf("fixed_time", T, 2.0 * cert["R"] + 2.0 * T + 1.0, spec, n=3, reduced=True)
    rhs = leaf.integrate(rho_m(F, leaf.t, leaf.x, quad=spec))
    assert lhs == pytest.approx(rhs, rel=1e-3)
