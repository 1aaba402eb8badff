from fractions import Fraction

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasovlab.errors import UsageError
from vlasovlab.fields import (
    IDENTITIES,
    apply,
    base_field,
    bracket_table,
    catalog,
    complete_lift,
    decompose,
    euler_v_field,
    lie_bracket,
    minkowski_identity_residual,
    transport_commutator,
    weight_catalog,
    weight_eval,
    weight_eval_exact,
)
from vlasovlab.geometry import PhasePoint
from vlasovlab.jets import PhaseFunction


def coeffs(F):
    return [str(c) for c in F.comps]


@pytest.mark.parametrize("algebra, n, count", [("P", 3, 10), ("K", 3, 11), ("K^", 3, 11),
                                                ("K^0", 3, 12), ("P^", 2, 6), ("K", 1, 4)])
def test_catalog_sizes(algebra, n, count):
    assert len(catalog(algebra, n)) == count


def test_unknown_algebra():
    with pytest.raises(UsageError):
        catalog("Q", 3)


def test_lift_table():
    n = 3
    dt = complete_lift(base_field("dt", n))
    assert dt.equals(base_field("dt", n))
    B1 = complete_lift(base_field("boost", n, 0, 1))
    c = coeffs(B1)
    assert c[0] == "x1" and c[1] == "t" and c[n + 1] == "v0"
    S = complete_lift(base_field("S", n))
    c = coeffs(S)
    assert c[0] == "t" and c[n + 1:] == ["v1", "v2", "v3"]


def test_rotation_lift_n2():
    R = complete_lift(base_field("rot", 2, 0, 1, 2))
    assert coeffs(R) == ["0", "-x2", "x1", "-v2", "v1"]


def test_lie_bracket_examples():
    n = 3
    dt, dx1 = base_field("dt", n), base_field("dx", n, 0, 1)
    assert lie_bracket(dt, dx1).is_zero()
    B1, B2 = (complete_lift(base_field("boost", n, 0, i)) for i in (1, 2))
    R12 = complete_lift(base_field("rot", n, 0, 1, 2))
    br = lie_bracket(B1, B2)
    d = decompose(br, [R12])
    assert d is not None and abs(d.coeffs["R12^"]) == 1
    S = complete_lift(base_field("S", n))
    assert lie_bracket(S, B1).is_zero()


@pytest.mark.parametrize("n", [2, 3])
def test_transport_commutators(n):
    for Z in catalog("P^", n, 1):
        assert transport_commutator(Z, 1).kind == "zero"
    for Z in catalog("K^", n, 0):
        assert transport_commutator(Z, 0).kind == "zero"
    c = transport_commutator(base_field("S", n, 0), 0)
    assert c.label() == "EqualsTransport"
    c = transport_commutator(euler_v_field(n, 0), 0)
    assert c.kind == "transport" and c.coefficient == -1


def test_massive_scaling_not_commuting():
    c = transport_commutator(complete_lift(base_field("S", 3, 1)), 1)
    assert c.kind == "other"


def test_bracket_closure_constant_coefficients():
    for a, b, dec in bracket_table("K^0", 3, 0):
        assert dec is not None, (a, b)
        assert all(isinstance(v, Fraction) for v in dec.coeffs.values())


def _pf(fn, d):
    return PhaseFunction(d, fn_jax=fn, fn_np=lambda Z: np.array([float(fn(jnp.asarray(z))) for z in Z]))


def test_apply_translation_and_euler():
    n = 3
    pf = _pf(lambda z: z[0] ** 2, 2 * n + 1)
    t, x, v = np.array([1.5]), np.zeros((1, n)), np.ones((1, n))
    assert apply(base_field("dt", n), pf, t, x, v)[0] == pytest.approx(3.0)
    # S^ on a function homogeneous of degree 3 in (t, x, v) returns 3 f
    hom = _pf(lambda z: z[0] * z[1] * z[4] + z[2] ** 2 * z[6], 2 * n + 1)
    S = complete_lift(base_field("S", n))
    z = np.array([[0.7, 0.3, -1.1, 0.4, 0.9, -0.2, 1.3]])
    val = apply(S, hom, z[:, 0], z[:, 1:4], z[:, 4:])[0]
    assert val == pytest.approx(3.0 * hom(z)[0], rel=1e-12)


def test_apply_boost_matches_finite_differences():
    n = 3
    fn = lambda z: jnp.exp(-jnp.sum(z[1:4] ** 2) - jnp.sum(z[4:] ** 2))
    pf_exact = _pf(fn, 2 * n + 1)
    B1 = complete_lift(base_field("boost", n, 0, 1))
    t, x, v = np.array([0.8]), np.array([[0.2, -0.4, 0.1]]), np.array([[0.5, 0.3, -0.6]])
    exact = apply(B1, pf_exact, t, x, v)[0]
    fd = apply(B1, pf_exact, t, x, v, method="fd")[0]
    assert exact == pytest.approx(fd, abs=1e-8)


def test_weight_examples():
    ws = {w.name: w for w in weight_catalog(3, 0, "k_0")}
    assert weight_eval(ws["v1"], PhasePoint(0.0, (0, 0, 0), (2, 0, 0))) == 2.0
    # x^a v_a with v_0 = -v0: -t v0 + x.v
    assert weight_eval(ws["x.v"], PhasePoint(2.0, (1, 0, 0), (1, 0, 0))) == pytest.approx(-1.0)
    with pytest.raises(UsageError):
        weight_catalog(3, 0, "nope")


@given(s=st.fractions(min_value=-20, max_value=20))
@settings(max_examples=40, deadline=None)
def test_k0_weights_exactly_conserved(s):
    v, v0 = (Fraction(2), Fraction(3), Fraction(6)), Fraction(7)
    x, t = (Fraction(1, 3), Fraction(-2, 5), Fraction(3)), Fraction(1, 2)
    for w in weight_catalog(3, 0, "k_0"):
        ref = weight_eval_exact(w, t, x, v, v0)
        xs = tuple(a + s * b / v0 for a, b in zip(x, v))
        assert weight_eval_exact(w, t + s, xs, v, v0) == ref


@pytest.mark.parametrize("name", sorted(IDENTITIES))
def test_identities_random_points(name, rng):
    t = rng.uniform(0.5, 5.0, 1000)
    x = rng.normal(size=(1000, 3))
    res, rejected = minkowski_identity_residual(name, t, x)
    assert res < 1e-8 and rejected == 0


def test_identity_rejects_origin():
    res, rejected = minkowski_identity_residual("dr", [1.0, 2.0], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert rejected == 1 and res < 1e-12
    with pytest.raises(UsageError):
        minkowski_identity_residual("bogus", [1.0], [[1.0, 0.0, 0.0]])
