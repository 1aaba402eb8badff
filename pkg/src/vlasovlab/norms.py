"""Global norms as nested quadrature functionals.

Each norm is a sum over multi-indices of lifted commutation fields (and,
for E_{N,q}, over products of kappa_0 weights) of leaf integrals of
velocity averages of |Z^alpha f|.  All multi-indices share one jet per
phase point.  For isotropic data the terms are grouped into orbits of the
coordinate permutations, which leave every leaf integral of an absolute
value unchanged; one representative per orbit is evaluated and weighted by
the orbit size.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .fields import catalog, weight_catalog
from .geometry import QuadratureSpec, build_leaf
from .kinetic import DistributionField, lifted_bank
from .moments import MomentSpec, velocity_average

__all__ = [
    "NORM_FAMILIES",
    "NORM_QUAD",
    "NormSpec",
    "NormReport",
    "norm_terms",
    "norm_K",
    "norm_P",
    "norm_ENq",
    "norm_EN_massive_vn",
    "l2_hyperboloid",
    "evaluate_norm",
    "sigma_leaf",
    "hyperboloid_leaf",
]

NORM_FAMILIES = ("K", "P", "ENq", "EN_massive_vn", "L2_hyperboloid")
NORM_QUAD = QuadratureSpec(x_radial=16, x_polar=8, x_fibre=12,
                           v_radial=16, v_polar=8, v_fibre=12)
_COLUMN_BUDGET = 1 << 22


@dataclass(frozen=True)
class NormSpec:
    """Family, orders and quadrature of a norm.

    ``order`` is k (K, P) or N (ENq, EN_massive_vn); ``q`` the weight order
    of ENq; ``alpha`` the multi-index of the L2 functional; ``budget`` caps
    the derivative order.
    """

    family: str
    order: int = 0
    q: int = 0
    alpha: tuple = ()
    quad: QuadratureSpec = NORM_QUAD
    orbits: bool = True
    budget: int = 4

    def __post_init__(self):
        if self.family not in NORM_FAMILIES:
            raise UsageError(f"unknown norm family {self.family!r}; choose from {NORM_FAMILIES}")
        if self.order < 0 or self.q < 0:
            raise UsageError("norm orders must be nonnegative")
        if max(self.order, len(self.alpha)) > self.budget:
            raise UsageError(f"derivative order exceeds the multi-index budget {self.budget}")

    @property
    def leaf_kind(self):
        return "fixed_time" if self.family in ("K", "ENq") else "hyperboloid"


@dataclass
class NormReport:
    """Norm value, tail bound and per-order contributions."""

    family: str
    order: int
    parameter: float
    value: float
    error_bound: float
    by_order: dict
    terms: int
    evaluated: int
    leaf: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(family=self.family, order=self.order, parameter=self.parameter,
                    value=self.value, error_bound=self.error_bound,
                    by_order={str(k): v for k, v in self.by_order.items()},
                    terms=self.terms, evaluated=self.evaluated, leaf=self.leaf)


# ----------------------------------------------------------------------------
# term enumeration and orbit reduction


def _field_names(algebra, n, m):
    return [f.name for f in catalog(algebra, n, m)]


def _canonical_label(label):
    """Sort index pairs so that relabelled names compare consistently."""
    label = re.sub(r"R(\d)(\d)", lambda mt: "R" + "".join(sorted(mt.group(1) + mt.group(2))), label)
    return re.sub(r"v(\d)x(\d)-x(\d)v(\d)",
                  lambda mt: "v{0}x{1}-x{0}v{1}".format(*sorted((mt.group(1), mt.group(2)))),
                  label)


def _relabel(label, perm):
    return _canonical_label(re.sub(r"[1-9]", lambda mt: str(perm[int(mt.group(0)) - 1]), label))


def norm_terms(names, order, n, weights=(), q=0, orbits=True):
    """Representative (alpha, beta) terms with multiplicities.

    ``names`` are field names, ``weights`` weight names; alpha runs over
    sequences of length <= order, beta over multisets of size <= q.
    Returns a list of (alpha, beta, multiplicity).
    """
    alphas = [()]
    for k in range(1, order + 1):
        alphas += list(itertools.product(names, repeat=k))
    betas = [()]
    for k in range(1, q + 1):
        betas += list(itertools.combinations_with_replacement(weights, k))
    if not orbits:
        return [(a, b, 1) for a in alphas for b in betas]
    perms = list(itertools.permutations(range(1, n + 1)))
    groups = {}
    for a in alphas:
        for b in betas:
            keys = []
            for p in perms:
                keys.append((tuple(_relabel(s, p) for s in a),
                             tuple(sorted(_relabel(s, p) for s in b))))
            key = min(keys)
            if key in groups:
                groups[key][2] += 1
            else:
                groups[key] = [a, b, 1]
    return [tuple(g) for g in groups.values()]


# ----------------------------------------------------------------------------
# leaves


def _v_extent(F, quad):
    d = F.datum
    V = d.v_radius if d.decay == "compact" else quad.v_radius * d.v_scale
    return V


def sigma_leaf(F: DistributionField, t, quad=NORM_QUAD, reduced=False):
    """Sigma_t leaf covering the support of the solution at time t."""
    d = F.datum
    n = F.n
    if d.x_kind == "powerlaw":
        breaks = sorted({c for c in (1.0, t - 3.0, t, t + 3.0, 10.0, 100.0, 1e3, 1e4, 1e6) if c > 0})
        return build_leaf("fixed_time", t, math.inf, quad, n, reduced, radial_map="algebraic",
                          breaks=breaks, decay=d.x_decay - n)
    R = F.footprint_radius
    if F.m == 0 and F.surface == "t0":
        lo, hi = max(0.0, t - R), t + R
        breaks = [t] if lo < t < hi else None
        return build_leaf("fixed_time", t, hi, quad, n, reduced, r_min=lo, breaks=breaks)
    return build_leaf("fixed_time", t, R + t, quad, n, reduced)


def hyperboloid_leaf(F: DistributionField, rho, quad=NORM_QUAD, reduced=False):
    """H_rho leaf covering particles from the footprint with |v| below the truncation."""
    n = F.n
    R = F.footprint_radius
    if F.law.kind == "vn_massive":
        R = 1.25 * R + 0.5
    V = _v_extent(F, quad)
    w = V / math.sqrt(F.m ** 2 + V * V) if F.m > 0 else 1.0
    if w >= 1.0:
        raise UsageError("hyperboloid leaves need a massive law")
    a = 1.0 - w * w
    t = (w * R + math.sqrt(w * w * R * R + a * (R * R + rho * rho))) / a
    r_max = math.sqrt(max(t * t - rho * rho, 1e-12))
    return build_leaf("hyperboloid", rho, r_max, quad, n, reduced)


# ----------------------------------------------------------------------------
# engine


def _weight_table(n):
    return {w.name: w for w in weight_catalog(n, 0, "kappa_0")}


def _radial_terms(F, terms):
    """Whether every term is a radial integrand (no derivatives, no weights)."""
    return F.isotropic and all(not a and not b for a, b, _ in terms)


def _leaf_sum(F, leaf, kind, terms, quad, v0_weights=None, route="direct"):
    """Per-term leaf integrals of velocity averages of |Z^alpha f| * weights."""
    n = F.n
    alphas = sorted({a for a, _, _ in terms}, key=lambda a: (len(a), a))
    aidx = {a: i for i, a in enumerate(alphas)}
    wtab = _weight_table(n) if any(b for _, b, _ in terms) else {}
    m = F.m
    ncol = len(terms)

    def integrand(Z):
        t, x, v = Z[:, 0], Z[:, 1:n + 1], Z[:, n + 1:]
        vals = np.abs(lifted_bank(F, alphas, Z, route=route))
        v0 = np.sqrt(m * m + np.sum(v * v, axis=1))
        out = np.empty((Z.shape[0], ncol))
        cache = {}
        for j, (a, b, _) in enumerate(terms):
            col = vals[:, aidx[a]]
            for name in b:
                if name not in cache:
                    cache[name] = np.abs(wtab[name].poly(t, x, v, v0))
                col = col * cache[name]
            if v0_weights is not None:
                col = col * v0 ** v0_weights[j]
            out[:, j] = col
        return out

    spec = MomentSpec(kind=kind, quad=quad)
    res = velocity_average(F, spec, leaf.t, leaf.x, integrand=integrand, check_tail=False,
                           chunk_nodes=max(4096, _COLUMN_BUDGET // max(ncol + len(alphas), 1)),
                           symmetric=_radial_terms(F, terms))
    vals = np.asarray(res.value).reshape(leaf.size, ncol)
    per_term = np.einsum("p,pj->j", leaf.weights * leaf.measure, vals)
    tail_rel = float(np.max(res.tail / np.maximum(np.abs(vals).max(axis=1), 1e-300))) \
        if np.any(res.tail) else 0.0
    return per_term, tail_rel


def _report(family, order, param, terms, per_term, tail_rel, leaf, F, extra_tail=0.0):
    by_order = {}
    total = 0.0
    for (a, b, mult), val in zip(terms, per_term):
        key = (len(a), len(b)) if family == "ENq" else len(a)
        by_order[key] = by_order.get(key, 0.0) + mult * val
        total += mult * val
    bound = (tail_rel + extra_tail) * total
    return NormReport(family, order, float(param), float(total), float(bound),
                      by_order, int(sum(t[2] for t in terms)), len(terms), dict(leaf.description))


def _leaf_x_tail(F, leaf):
    d = F.datum
    if leaf.kind == "fixed_time" and d.x_kind == "powerlaw":
        return 0.0
    return d.x_tail(d.x_radius)


def norm_K(F: DistributionField, k, t, quad=NORM_QUAD, orbits=True):
    """sum_{|alpha| <= k} int_{Sigma_t} rho_0(|Z^alpha f|) dx over the lifted K^ fields."""
    if F.m != 0:
        raise UsageError("norm_K needs a massless law")
    return _sigma_norm(F, "K", k, 0, t, quad, orbits)


def norm_ENq(F: DistributionField, N, q, t, quad=NORM_QUAD, orbits=True):
    """sum over |alpha| <= N, |beta| <= q of int rho_0(|Z^alpha f| prod |z|/v0) dx."""
    if F.m != 0:
        raise UsageError("E_{N,q} norms need a massless law")
    return _sigma_norm(F, "ENq", N, q, t, quad, orbits)


def _sigma_norm(F, family, N, q, t, quad, orbits):
    n = F.n
    names = _field_names("K^", n, 0)
    wnames = list(_weight_table(n)) if q else []
    if F.is_zero:
        terms = norm_terms(names, N, n, wnames, q, False)
        return NormReport(family, N, t, 0.0, 0.0, {}, len(terms), 0, {})
    terms = norm_terms(names, N, n, wnames, q, orbits and F.isotropic)
    leaf = sigma_leaf(F, t, quad, reduced=_radial_terms(F, terms))
    per, tail = _leaf_sum(F, leaf, "vabs", terms, quad)
    return _report(family, N, t, terms, per, tail, leaf, F, _leaf_x_tail(F, leaf))


def _massive_names(F):
    return _field_names("P^", F.n, F.m)


def norm_P(F: DistributionField, k, rho, quad=NORM_QUAD, orbits=True):
    """sum_{|alpha| <= k} int_{H_rho} chi_m(|Z^alpha f|) dmu over the lifted P^ fields."""
    if not F.m > 0:
        raise UsageError("norm_P needs a massive law")
    names = _massive_names(F)
    if F.is_zero:
        return NormReport("P", k, rho, 0.0, 0.0, {}, len(norm_terms(names, k, F.n, orbits=False)), 0)
    terms = norm_terms(names, k, F.n, orbits=orbits and F.isotropic)
    leaf = hyperboloid_leaf(F, rho, quad, reduced=_radial_terms(F, terms))
    per, tail = _leaf_sum(F, leaf, "chi", terms, quad)
    return _report("P", k, rho, terms, per, tail, leaf, F, _leaf_x_tail(F, leaf))


def norm_EN_massive_vn(F: DistributionField, N, rho, quad=NORM_QUAD, orbits=True):
    """sum_{|alpha| <= N} int_{H_rho} chi_m(w_alpha |Z^alpha f|) dmu with
    w_alpha = (v0)^2 for |alpha| <= N//2 and 1 above.

    ``by_order`` separates the contributions by |alpha|; the low/high split
    is at N//2.
    """
    if F.m != 1.0:
        raise UsageError("the mixed-weight norm is defined for m = 1")
    names = _massive_names(F)
    terms = norm_terms(names, N, F.n, orbits=orbits and F.isotropic)
    if F.is_zero:
        return NormReport("EN_massive_vn", N, rho, 0.0, 0.0, {}, len(terms), 0)
    low = N // 2
    powers = [2.0 if len(a) <= low else 0.0 for a, _, _ in terms]
    leaf = hyperboloid_leaf(F, rho, quad, reduced=_radial_terms(F, terms))
    per, tail = _leaf_sum(F, leaf, "chi", terms, quad, v0_weights=powers)
    rep = _report("EN_massive_vn", N, rho, terms, per, tail, leaf, F, _leaf_x_tail(F, leaf))
    rep.leaf["low_high_split"] = low
    return rep


def l2_hyperboloid(F: DistributionField, alpha, rho, quad=NORM_QUAD):
    """int_{H_rho} (t/rho) (int |Z^alpha f| dv/v0)^2 dmu."""
    if not F.m > 0:
        raise UsageError("the L2 hyperboloid functional needs a massive law")
    alpha = tuple(alpha)
    if F.is_zero:
        return 0.0
    leaf = hyperboloid_leaf(F, rho, quad, reduced=F.isotropic and not alpha)
    if alpha:
        integrand = lambda Z: lifted_bank(F, [alpha], Z)[:, 0]
        spec = MomentSpec(kind="dmu", absolute=True, quad=quad)
        avg = velocity_average(F, spec, leaf.t, leaf.x, integrand=integrand, check_tail=False).value
    else:
        spec = MomentSpec(kind="dmu", absolute=True, quad=quad)
        avg = velocity_average(F, spec, leaf.t, leaf.x, check_tail=False).value
    return leaf.integrate(leaf.t / rho * np.asarray(avg) ** 2)


def evaluate_norm(F: DistributionField, spec: NormSpec, parameter):
    """Dispatch on ``spec.family`` (parameter is t or rho)."""
    fam = spec.family
    if fam == "K":
        return norm_K(F, spec.order, parameter, spec.quad, spec.orbits)
    if fam == "ENq":
        return norm_ENq(F, spec.order, spec.q, parameter, spec.quad, spec.orbits)
    if fam == "P":
        return norm_P(F, spec.order, parameter, spec.quad, spec.orbits)
    if fam == "EN_massive_vn":
        return norm_EN_massive_vn(F, spec.order, parameter, spec.quad, spec.orbits)
    val = l2_hyperboloid(F, spec.alpha, parameter, spec.quad)
    return NormReport(fam, len(spec.alpha), float(parameter), float(val), 0.0,
                      {len(spec.alpha): float(val)}, 1, 1)
