"""Commutation algebras, complete lifts, brackets and conserved weights.

Fields are first-order operators on phase space (t, x, v) restricted to the
mass shell.  A :class:`LiftedField` stores 2n+1 coefficient polynomials,
one per coordinate direction: d_t, d_{x^1..n}, d_{v^1..n}.

Catalog ordering is translations -> rotations -> boosts -> scaling.
Rotations follow Omega_ij = x^i d_j - x^j d_i, boosts
Omega_0i = t d_i + x^i d_t, scaling S = t d_t + x^i d_i.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import UsageError
from .poly import Poly, coordinate_names

__all__ = [
    "LiftedField",
    "Weight",
    "Decomposition",
    "CommutatorClass",
    "ALGEBRAS",
    "base_field",
    "catalog",
    "complete_lift",
    "lie_bracket",
    "decompose",
    "bracket_table",
    "transport_field",
    "euler_v_field",
    "transport_commutator",
    "weight_catalog",
    "weight_eval",
    "weight_eval_exact",
    "weight_bracket",
    "DiffOp",
    "multi_indices",
    "apply",
    "IDENTITIES",
    "minkowski_identity_residual",
]


def _m2(m):
    return Fraction(m) ** 2 if not isinstance(m, float) else Fraction(m).limit_denominator(10**9) ** 2


@dataclass(frozen=True)
class LiftedField:
    """First-order operator sum_k comps[k] * d_k on the mass shell."""

    name: str
    n: int
    m2: Fraction
    comps: Tuple[Poly, ...]

    # -- algebra ----------------------------------------------------------
    def act(self, p: Poly) -> Poly:
        """Apply the field to a polynomial function on phase space."""
        out = Poly(self.n, self.m2)
        for k, c in enumerate(self.comps):
            if c.terms:
                d = p.diff(k)
                if d.terms:
                    out = out + c * d
        return out

    def __add__(self, other):
        return LiftedField(f"({self.name}+{other.name})", self.n, self.m2,
                           tuple(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other):
        return LiftedField(f"({self.name}-{other.name})", self.n, self.m2,
                           tuple(a - b for a, b in zip(self.comps, other.comps)))

    def scaled(self, c, name=None):
        return LiftedField(name or f"{c}*{self.name}", self.n, self.m2,
                           tuple(a * c for a in self.comps))

    def renamed(self, name):
        return LiftedField(name, self.n, self.m2, self.comps)

    def is_zero(self):
        return all(c.is_zero() for c in self.comps)

    def equals(self, other):
        return (self - other).is_zero()

    @property
    def base(self):
        return self.comps[: self.n + 1]

    @property
    def vertical(self):
        return self.comps[self.n + 1:]

    def coefficients(self, t, x, v):
        """Numerical coefficient array (..., 2n+1) at batched points."""
        return np.stack([c(t, x, v) * np.ones(np.shape(t)) for c in self.comps], axis=-1)

    def describe(self):
        names = coordinate_names(self.n)
        parts = []
        for nm, c in zip(names, self.comps):
            if not c.is_zero():
                s = str(c)
                s = s if " " not in s else f"({s})"
                parts.append(f"{s}*d{nm}")
        return " + ".join(parts) if parts else "0"

    def __str__(self):
        return f"{self.name} = {self.describe()}"


# ----------------------------------------------------------------------------
# catalog


ALGEBRAS = ("P", "K", "P^", "K^", "P^0", "K^0")


def _zero_comps(n, m2):
    return [Poly(n, m2) for _ in range(2 * n + 1)]


def base_field(kind, n, m=0, i=None, j=None):
    """Base (unlifted) field on R^{1+n} as a LiftedField with zero v-part.

    kind: ``dt``, ``dx`` (i), ``rot`` (i<j), ``boost`` (i), ``S``.
    """
    m2 = _m2(m)
    var = lambda name: Poly.var(n, m2, name)
    one = Poly.const(n, m2, 1)
    c = _zero_comps(n, m2)
    if kind == "dt":
        c[0] = one
        name = "dt"
    elif kind == "dx":
        c[i] = one
        name = f"dx{i}"
    elif kind == "rot":
        c[j] = var(f"x{i}")
        c[i] = -var(f"x{j}")
        name = f"R{i}{j}"
    elif kind == "boost":
        c[i] = var("t")
        c[0] = var(f"x{i}")
        name = f"B{i}"
    elif kind == "S":
        c[0] = var("t")
        for k in range(1, n + 1):
            c[k] = var(f"x{k}")
        name = "S"
    else:
        raise UsageError(f"unknown base field kind {kind!r}")
    return LiftedField(name, n, m2, tuple(c))


def _base_list(n, m, with_scaling):
    out = [base_field("dt", n, m)] + [base_field("dx", n, m, i) for i in range(1, n + 1)]
    out += [base_field("rot", n, m, i, j) for i, j in itertools.combinations(range(1, n + 1), 2)]
    out += [base_field("boost", n, m, i) for i in range(1, n + 1)]
    if with_scaling:
        out.append(base_field("S", n, m))
    return out


def complete_lift(W: LiftedField, m=None) -> LiftedField:
    """Complete lift W^a d_a + v^b (d_b W^i) d_{v^i} with v^0 on the shell.

    The base coefficients must be polynomials in (t, x) only.
    """
    n = W.n
    m2 = W.m2 if m is None else _m2(m)
    base = [Poly(n, m2, c.terms) for c in W.base]
    for c in base:
        if any(k[n + 1:] != (0,) * (n + 1) for k in c.terms):
            raise UsageError("base coefficients must depend on (t, x) only")
    vel = [Poly.var(n, m2, "v0")] + [Poly.var(n, m2, f"v{i}") for i in range(1, n + 1)]
    vert = []
    for i in range(1, n + 1):
        acc = Poly(n, m2)
        for b in range(n + 1):
            d = base[i].diff(b)
            if d.terms:
                acc = acc + vel[b] * d
        vert.append(acc)
    name = W.name if W.name.startswith(("dt", "dx")) else W.name + "^"
    return LiftedField(name, n, m2, tuple(base + vert))


def catalog(algebra, n, m=0) -> List[LiftedField]:
    """Generator list of an algebra in the fixed ordering.

    ``P``/``K``: Poincare / conformal-type base algebras; ``P^``/``K^``:
    their complete lifts; ``P^0``/``K^0``: the lifts plus the unlifted
    scaling S appended last.
    """
    if algebra not in ALGEBRAS:
        raise UsageError(f"unknown algebra {algebra!r}; expected one of {ALGEBRAS}")
    if not 1 <= n <= 4:
        raise UsageError("dimension must be in 1..4")
    with_s = algebra.startswith("K")
    base = _base_list(n, m, with_s)
    if algebra in ("P", "K"):
        return base
    lifted = [complete_lift(W) for W in base]
    if algebra.endswith("0"):
        lifted.append(base_field("S", n, m))
    return lifted


def transport_field(n, m=0):
    """T_m = v0 d_t + v^i d_{x^i}."""
    m2 = _m2(m)
    c = _zero_comps(n, m2)
    c[0] = Poly.var(n, m2, "v0")
    for i in range(1, n + 1):
        c[i] = Poly.var(n, m2, f"v{i}")
    return LiftedField(f"T{m}", n, m2, tuple(c))


def euler_v_field(n, m=0):
    """v^i d_{v^i}."""
    m2 = _m2(m)
    c = _zero_comps(n, m2)
    for i in range(1, n + 1):
        c[n + i] = Poly.var(n, m2, f"v{i}")
    return LiftedField("V", n, m2, tuple(c))


def lie_bracket(F: LiftedField, G: LiftedField) -> LiftedField:
    """[F, G] = F G - G F, computed exactly on the shell."""
    if F.n != G.n or F.m2 != G.m2:
        raise UsageError("fields live on different phase spaces")
    comps = tuple(F.act(g) - G.act(f) for f, g in zip(F.comps, G.comps))
    return LiftedField(f"[{F.name},{G.name}]", F.n, F.m2, comps)


# ----------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class Decomposition:
    """target = sum coeffs[name] * basis[name], verified exactly."""

    coeffs: Dict[str, Fraction]

    def __str__(self):
        if not self.coeffs:
            return "0"
        parts = []
        for k, c in self.coeffs.items():
            parts.append(k if c == 1 else (f"-{k}" if c == -1 else f"{c}*{k}"))
        return " + ".join(parts).replace("+ -", "- ")


def _linear_system(targets: Sequence[Sequence[Poly]], basis_polys):
    """Rows: (component, monomial) after clearing a common v0 power."""
    allp = [p for comp in targets for p in comp] + [p for b in basis_polys for p in b]
    shift = max(0, max((-p.min_v0_power() for p in allp), default=0))
    cleared_t = [[p.cleared(shift) for p in comp] for comp in targets]
    cleared_b = [[p.cleared(shift) for p in b] for b in basis_polys]
    rows = sorted({(k, key) for b in cleared_b + cleared_t for k, p in enumerate(b)
                   for key in p.terms})
    index = {r: i for i, r in enumerate(rows)}
    A = np.zeros((len(rows), len(basis_polys)))
    for j, b in enumerate(cleared_b):
        for k, p in enumerate(b):
            for key, c in p.terms.items():
                A[index[(k, key)], j] = float(c)
    B = np.zeros((len(rows), len(targets)))
    for j, b in enumerate(cleared_t):
        for k, p in enumerate(b):
            for key, c in p.terms.items():
                B[index[(k, key)], j] = float(c)
    return A, B


def decompose(target, basis, names=None):
    """Constant-coefficient decomposition of ``target`` over ``basis``.

    Works for LiftedFields or Polys.  Solves in floating point, rounds to
    rationals and then verifies the identity exactly; returns None if no
    exact constant-coefficient decomposition exists.
    """
    is_field = isinstance(target, LiftedField)
    tcomps = list(target.comps) if is_field else [target]
    bcomps = [list(b.comps) if is_field else [b.poly if isinstance(b, Weight) else b]
              for b in basis]
    names = names or [getattr(b, "name", str(i)) for i, b in enumerate(basis)]
    if all(p.is_zero() for p in tcomps):
        return Decomposition({})
    A, B = _linear_system([tcomps], bcomps)
    sol, *_ = np.linalg.lstsq(A, B[:, 0], rcond=None)
    coeffs = {}
    for nm, c in zip(names, sol):
        q = Fraction(float(c)).limit_denominator(1000)
        if q:
            coeffs[nm] = q
    for k, p in enumerate(tcomps):
        acc = Poly(p.n, p.m2, p.terms)
        for nm, b in zip(names, bcomps):
            if nm in coeffs:
                acc = acc - b[k] * coeffs[nm]
        if not acc.is_zero():
            return None
    return Decomposition(coeffs)


def bracket_table(algebra, n, m=0, basis_algebra=None):
    """All brackets [Z_a, Z_b], a < b, with their decompositions.

    Returns rows (name_a, name_b, Decomposition or None).  The default
    decomposition basis is the hatted algebra without the extra scaling.
    """
    fields = catalog(algebra, n, m)
    if basis_algebra is None:
        basis_algebra = algebra[:2] if algebra.endswith("0") else algebra
    basis = catalog(basis_algebra, n, m)
    rows = []
    for a, b in itertools.combinations(range(len(fields)), 2):
        br = lie_bracket(fields[a], fields[b])
        rows.append((fields[a].name, fields[b].name, decompose(br, basis)))
    return rows


@dataclass(frozen=True)
class CommutatorClass:
    """Classification of [T_m, F]: ``zero``, ``transport`` (= c T_m with
    ``coefficient`` c) or ``other`` (with the field attached)."""

    kind: str
    coefficient: Fraction = Fraction(0)
    field: LiftedField = None

    def label(self):
        if self.kind == "zero":
            return "Zero"
        if self.kind == "transport":
            return "EqualsTransport" if self.coefficient == 1 else f"{self.coefficient}*Transport"
        return "Other"


def transport_commutator(F: LiftedField, m=None) -> CommutatorClass:
    """Exact [T_m, F] on the mass shell, classified."""
    n = F.n
    if m is not None and _m2(m) != F.m2:
        F = LiftedField(F.name, n, _m2(m), tuple(Poly(n, _m2(m), c.terms) for c in F.comps))
    T = transport_field(n, 0)
    T = LiftedField(T.name, n, F.m2, tuple(Poly(n, F.m2, c.terms) for c in T.comps))
    C = lie_bracket(T, F)
    if C.is_zero():
        return CommutatorClass("zero", Fraction(0), C)
    d = decompose(C, [T])
    if d is not None:
        return CommutatorClass("transport", d.coeffs.get(T.name, Fraction(0)), C)
    return CommutatorClass("other", Fraction(0), C)


# ----------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class Weight:
    """A conserved weight stored as a (Laurent in v0) polynomial."""

    name: str
    poly: Poly

    def __call__(self, t, x, v):
        return self.poly(t, x, v)


def weight_catalog(n, m=0, family="k_0") -> List[Weight]:
    """Weights: ``k_m`` = {v^a x^b - x^a v^b (a<b), v^a}; ``k_0`` adds
    x^a v_a = -t v0 + x.v; ``kappa_0`` divides every k_0 weight by v0."""
    if family not in ("k_m", "k_0", "kappa_0"):
        raise UsageError(f"unknown weight family {family!r}")
    m2 = _m2(m)
    X = [Poly.var(n, m2, "t")] + [Poly.var(n, m2, f"x{i}") for i in range(1, n + 1)]
    V = [Poly.var(n, m2, "v0")] + [Poly.var(n, m2, f"v{i}") for i in range(1, n + 1)]
    out = []
    for a, b in itertools.combinations(range(n + 1), 2):
        out.append(Weight(f"v{a}x{b}-x{a}v{b}", V[a] * X[b] - X[a] * V[b]))
    for a in range(n + 1):
        out.append(Weight(f"v{a}", V[a]))
    if family in ("k_0", "kappa_0"):
        xv = -X[0] * V[0]
        for i in range(1, n + 1):
            xv = xv + X[i] * V[i]
        out.append(Weight("x.v", xv))
    if family == "kappa_0":
        out = [Weight(f"({w.name})/v0", w.poly.v0_power(-1)) for w in out]
    return out


def weight_eval(w: Weight, p):
    """Value of a weight at a PhasePoint."""
    t, x, v = p.as_arrays()
    return float(w.poly(t, x, v, p.v0))


def weight_eval_exact(w: Weight, t, x, v, v0):
    """Exact rational value; v0 must be supplied (rational on the shell)."""
    return w.poly.eval_exact(t, x, v, v0)


def weight_bracket(Z: LiftedField, w: Weight, basis: Sequence[Weight]):
    """Z(w) = [Z, w] as a multiplication operator, decomposed over ``basis``."""
    return decompose(Z.act(w.poly), list(basis), [b.name for b in basis])


# ----------------------------------------------------------------------------
# differential operators in normal order


class DiffOp:
    """sum_beta c_beta(t,x,v) d^beta with beta a count vector over 2n+1 coords."""

    def __init__(self, n, m2, terms=None):
        self.n = n
        self.m2 = m2
        self.terms: Dict[Tuple[int, ...], Poly] = dict(terms or {})

    @classmethod
    def identity(cls, n, m2):
        return cls(n, m2, {(0,) * (2 * n + 1): Poly.const(n, m2, 1)})

    @property
    def order(self):
        return max((sum(k) for k in self.terms), default=0)

    def compose_left(self, F: LiftedField) -> "DiffOp":
        """F o self."""
        out: Dict[Tuple[int, ...], Poly] = {}

        def add(key, p):
            if p.is_zero():
                return
            if key in out:
                s = out[key] + p
                if s.is_zero():
                    del out[key]
                else:
                    out[key] = s
            else:
                out[key] = p

        for beta, c in self.terms.items():
            add(beta, F.act(c))
            for k, a in enumerate(F.comps):
                if a.terms:
                    nb = list(beta)
                    nb[k] += 1
                    add(tuple(nb), a * c)
        return DiffOp(self.n, self.m2, out)

    @classmethod
    def from_multi_index(cls, fields: Sequence[LiftedField]):
        """Z^alpha = Z_1 Z_2 ... Z_k (rightmost acts first)."""
        if not fields:
            raise UsageError("empty multi-index needs explicit dimension; use identity()")
        n, m2 = fields[0].n, fields[0].m2
        D = cls.identity(n, m2)
        for F in reversed(list(fields)):
            D = D.compose_left(F)
        return D

    def compiled(self):
        """List of (beta, exps, coeffs) for fast numerical evaluation."""
        return [(beta, *c.compile()) for beta, c in self.terms.items()]

    def __call__(self, jet, t, x, v):
        """Evaluate sum_beta c_beta * (d^beta f) with partials from ``jet``."""
        total = 0.0
        for beta, c in self.terms.items():
            total = total + c(t, x, v) * jet[beta]
        return total


def multi_indices(k_max, count):
    """All index sequences of length <= k_max over range(count)."""
    out = [()]
    for k in range(1, k_max + 1):
        out += list(itertools.product(range(count), repeat=k))
    return out


# ----------------------------------------------------------------------------
# numerical application


def _phase_points(t, x, v):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    N = max(x.shape[0], v.shape[0])
    x = np.broadcast_to(x, (N, x.shape[1]))
    v = np.broadcast_to(v, (N, v.shape[1]))
    t = np.broadcast_to(np.asarray(t, dtype=float), (N,))
    return t, x, v, np.concatenate([t[:, None], x, v], axis=1)


def apply(F, func, t, x, v, method=None):
    """Value of Z^alpha f at batched phase points.

    ``F`` is a LiftedField or a sequence of them (applied right to left);
    ``func`` is a :class:`~vlasovlab.jets.PhaseFunction` whose derivative
    oracle (exact or finite differences) must reach the operator order.
    """
    from .jets import PhaseFunction

    fields = [F] if isinstance(F, LiftedField) else list(F)
    if not isinstance(func, PhaseFunction):
        raise UsageError("apply needs a PhaseFunction with a derivative oracle")
    t, x, v, Z = _phase_points(t, x, v)
    if not fields:
        return func(Z)
    op = DiffOp.from_multi_index(fields)
    jet = func.jet(Z, op.order, method)
    return op(jet, t, x, v)


# Vector-field identities on R^{1+n}.  In these identities the rotation is
# Om_ij = x^j d_i - x^i d_j, the negative of the catalog rotation R_ij.
IDENTITIES = {
    "dt": "(t^2-r^2) d_t = t S - x^i Om_0i",
    "di": "(t^2-r^2) d_i = -x^j Om_ij + t Om_0i - x^i S",
    "dr": "(t^2-r^2) d_r = t (x^i/r) Om_0i - r S",
    "ds": "(d_t + d_r)/2 = (S + w^i Om_0i) / (2 (t+r))",
    "dbar_rot": "d_i - w_i d_r = w^j Om_ij / r",
    "dbar_boost": "d_i - w_i d_r = (Om_0i - w_i w^j Om_0j) / t",
}
_SINGULAR = {"dr", "ds", "dbar_rot", "dbar_boost"}


def _identity_test_functions(n):
    import jax.numpy as jnp

    a = jnp.linspace(0.3, -0.4, n)

    def linear(z):
        return z[0] + 0.5 * jnp.sum(z[1:] * a)

    def gaussian(z):
        return jnp.exp(-0.3 * (z[0] - 1.0) ** 2 - 0.2 * jnp.sum((z[1:] - a) ** 2))

    def poly(z):
        return z[0] ** 2 * z[1] - z[1] ** 3 + z[0] * jnp.sum(z[1:]) ** 2

    def trig(z):
        return jnp.sin(0.7 * z[0] - jnp.sum(z[1:] * a)) * jnp.cos(0.2 * z[1])

    return [linear, gaussian, poly, trig]


def _identity_sides(name, n, t, x, g):
    """(lhs, rhs, scale) arrays for gradient rows g = (f_t, f_x)."""
    ft, fx = g[:, 0], g[:, 1:]
    r = np.linalg.norm(x, axis=-1)
    S = t * ft + np.sum(x * fx, axis=-1)
    B = t[:, None] * fx + x * ft[:, None]  # Om_0i f

    def rot(i, j):  # Om_ij f in the identity convention
        return x[:, j] * fx[:, i] - x[:, i] * fx[:, j]

    with np.errstate(invalid="ignore", divide="ignore"):
        w = x / r[:, None]
        fr = np.sum(w * fx, axis=-1)
        out = []
        if name == "dt":
            out.append(((t * t - r * r) * ft, t * S - np.sum(x * B, axis=-1)))
        elif name == "dr":
            out.append(((t * t - r * r) * fr, t * np.sum(w * B, axis=-1) - r * S))
        elif name == "ds":
            out.append((0.5 * (ft + fr), (S + np.sum(w * B, axis=-1)) / (2 * (t + r))))
        else:
            for i in range(n):
                if name == "di":
                    rhs = t * B[:, i] - x[:, i] * S
                    for j in range(n):
                        rhs = rhs - x[:, j] * rot(i, j)
                    out.append(((t * t - r * r) * fx[:, i], rhs))
                elif name == "dbar_rot":
                    rhs = sum(w[:, j] * rot(i, j) for j in range(n)) / r
                    out.append((fx[:, i] - w[:, i] * fr, rhs))
                elif name == "dbar_boost":
                    rhs = (B[:, i] - w[:, i] * np.sum(w * B, axis=-1)) / t
                    out.append((fx[:, i] - w[:, i] * fr, rhs))
    scale = 1.0 + (np.abs(t) + r) ** 2 * np.max(np.abs(g), axis=1)
    return out, scale


def minkowski_identity_residual(identity, t, x):
    """Max relative residual of a vector-field identity over a test battery.

    Points with r = 0 are rejected for identities carrying 1/r
    coefficients.  Returns ``(max_residual, rejected_count)``.
    """
    import jax
    import jax.numpy as jnp

    if identity not in IDENTITIES:
        raise UsageError(f"unknown identity {identity!r}; expected one of {sorted(IDENTITIES)}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
    n = x.shape[1]
    keep = np.ones(t.shape, dtype=bool)
    if identity in _SINGULAR:
        keep = np.linalg.norm(x, axis=-1) > 0
    if identity in ("ds", "dbar_boost"):
        keep &= t != 0
    rejected = int(np.sum(~keep))
    t, x = t[keep], x[keep]
    if t.size == 0:
        return 0.0, rejected
    Z = jnp.asarray(np.concatenate([t[:, None], x], axis=1))
    worst = 0.0
    for fn in _identity_test_functions(n):
        g = np.asarray(jax.vmap(jax.grad(fn))(Z))
        pairs, scale = _identity_sides(identity, n, t, x, g)
        for lhs, rhs in pairs:
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
    return worst, rejected
