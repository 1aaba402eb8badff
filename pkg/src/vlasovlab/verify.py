"""Verification engine: decay fits, Klainerman-Sobolev normalizations,
conservation and commutation suites, the radial integral lemma, and the
Vlasov-Nordstrom checks.

Every estimate proved up to a constant is verified as boundedness plus
refinement stability of a normalized supremum, or as an exponent fit with a
tolerance window.  Thresholds come from :class:`VerifyConfig` and are
recorded in every :class:`CheckResult`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, UsageError
from .fields import (
    IDENTITIES,
    base_field,
    bracket_table,
    catalog,
    euler_v_field,
    minkowski_identity_residual,
    transport_commutator,
    weight_catalog,
    weight_eval_exact,
)
from .geometry import QuadratureSpec
from .kinetic import DistributionField, Law, evolve_vn_massive_prescribed, evolve_vn_massless
from .moments import MomentSpec, average_commutation_residual, velocity_average
from .norms import NormReport, norm_ENq, norm_K, norm_P, l2_hyperboloid
from .waves import (
    WaveField,
    box_residual,
    null_decomposition,
    transport_of_phi,
    wave_decay_checks,
    wave_energy_hyperboloid,
)

__all__ = [
    "SCHEMA_VERSION",
    "CheckResult",
    "DecayReport",
    "KSReport",
    "AppendixBReport",
    "VerifyConfig",
    "decay_fit",
    "average_series",
    "ks_check_massless",
    "ks_check_massive",
    "improved_derivative_decay",
    "appendix_b_integral",
    "appendix_b_check",
    "vn_massless_checks",
    "vn_massive_prescribed_checks",
    "algebra_checks",
    "weight_checks",
    "conservation_checks",
    "averaging_checks",
    "identity_checks",
    "wave_checks",
]

SCHEMA_VERSION = "1.0"


# ----------------------------------------------------------------------------
# result types


def _satisfies(value, threshold, relation):
    if value is None or not np.isfinite(value):
        return False
    if relation == "<":
        return value < threshold
    if relation == "<=":
        return value <= threshold
    if relation == ">=":
        return value >= threshold
    if relation == ">":
        return value > threshold
    if relation == "==":
        return value == threshold
    if relation == "in":
        lo, hi = threshold
        return lo <= value <= hi
    raise UsageError(f"unknown relation {relation!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


@dataclass
class CheckResult:
    """Outcome of one check: ``passed`` holds exactly when ``value``
    satisfies ``relation`` against ``threshold``."""

    check: str
    passed: bool
    value: float
    threshold: object
    relation: str = "<="
    provenance: str = "config"
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @classmethod
    def compare(cls, check, value, threshold, relation="<=", provenance="config", **details):
        value = float(value) if value is not None else float("nan")
        return cls(check, bool(_satisfies(value, threshold, relation)), value, threshold,
                   relation, provenance, details)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.check}: {self.value:.6g} {self.relation} {self.threshold}"

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class DecayReport:
    """Least-squares fit of log(value) against log(parameter)."""

    exponent: float
    stderr: float
    window: tuple
    samples: int
    intercept: float
    sup_normalized: float
    predicted: Optional[float] = None
    refinement_delta: Optional[float] = None
    excluded: int = 0
    parameters: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class KSReport:
    """Normalized supremum on a sample set and on its refinement."""

    sup: float
    refined_sup: float
    refinement_delta: float
    norm: float
    samples: int
    argmax: tuple = ()
    table: list = field(default_factory=list)

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class AppendixBReport:
    alpha: float
    beta: float
    n: int
    log_variant: bool
    t: list
    lhs: list
    ratio: list
    max_ratio: float
    min_ratio: float
    band: float
    late_band: float
    decade_band: float = float("nan")

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass(frozen=True)
class VerifyConfig:
    """Thresholds and sampling of the checks (all config values)."""

    fit_window: tuple = (10.0, 100.0)
    exponent_rel_tol: float = 0.05
    refinement_tol: float = 0.10
    derivative_tol: float = 0.2
    ks_offsets: tuple = (0.5, 1.0, 2.0)
    ks_times: tuple = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
    massive_times: tuple = tuple(float(f"{t:.6g}") for t in np.geomspace(1.5, 100.0, 10))
    massive_fractions: tuple = (0.0, 0.25, 0.5, 0.75)
    appendix_band: float = 2.0
    commutator_tol: float = 1e-5
    conservation_tol: float = 1e-6
    weight_drift_factor: float = 10.0
    vn_bound_factor: float = 1.5
    vn_ratio_window: tuple = (1.4, 2.8)
    vn_times: tuple = (0.0, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0)
    vn_window: tuple = (10.0, 50.0)
    massive_window: tuple = (20.0, 100.0)
    massive_loss_lo: float = 0.2
    massive_loss_hi: float = 0.3
    drift_tol: float = 1e-8
    wave_box_tol: float = 1e-10
    wave_null_tol: float = 1e-10
    wave_flux_tol: float = 1e-6
    tol_scale: float = 1.0

    def scaled(self, factor):
        """Tolerances multiplied by ``factor`` (exponent windows unchanged)."""
        return replace(self, commutator_tol=self.commutator_tol * factor,
                       conservation_tol=self.conservation_tol * factor,
                       drift_tol=self.drift_tol * factor,
                       wave_box_tol=self.wave_box_tol * factor,
                       wave_null_tol=self.wave_null_tol * factor,
                       wave_flux_tol=self.wave_flux_tol * factor,
                       tol_scale=self.tol_scale * factor)


DEFAULT_CONFIG = VerifyConfig()


# ----------------------------------------------------------------------------
# decay fits


def decay_fit(samples, window=None, predicted=None, min_samples=5):
    """Least-squares slope of log(value) against log(parameter).

    ``samples`` is a sequence of (parameter, value) pairs; only pairs with
    the parameter inside ``window`` (inclusive) enter the fit.  The
    standard error is the usual slope error from the fit residuals.  The
    normalized supremum is max value * parameter^(-rate) with the predicted
    rate when given, else the fitted one.
    """
    arr = np.asarray(samples, dtype=float).reshape(-1, 2)
    p, v = arr[:, 0], arr[:, 1]
    if window is not None:
        lo, hi = window
        sel = (p >= lo) & (p <= hi)
        p, v = p[sel], v[sel]
    if p.size < min_samples:
        raise UsageError(f"decay fit needs at least {min_samples} samples in the window, got {p.size}")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise UsageError("decay fit needs positive finite values")
    if np.any(p <= 0):
        raise UsageError("decay fit needs positive parameters")
    X = np.log(p)
    Y = np.log(v)
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    slope, icept = float(coef[0]), float(coef[1])
    resid = Y - A @ coef
    k = X.size
    sxx = float(np.sum((X - X.mean()) ** 2))
    s2 = float(np.sum(resid ** 2)) / max(k - 2, 1)
    stderr = math.sqrt(s2 / sxx) if sxx > 0 else float("inf")
    rate = slope if predicted is None else float(predicted)
    sup = float(np.max(v * p ** (-rate)))
    win = (float(p.min()), float(p.max()))
    return DecayReport(slope, stderr, win, int(k), icept, sup, predicted,
                       parameters=p.tolist(), values=v.tolist())


def _exclude_crossings(p, v):
    """Keep samples sharing the sign of the last (asymptotic) sample."""
    v = np.asarray(v, dtype=float)
    sign = np.sign(v[-1]) if v[-1] != 0 else 1.0
    keep = (np.sign(v) == sign) & (v != 0)
    return np.asarray(p)[keep], np.abs(v[keep]), int(np.sum(~keep))


# ----------------------------------------------------------------------------
# velocity-average series at points


def _average_kind(F):
    return "vabs" if F.m == 0 else "dmu"


def average_series(F: DistributionField, t_samples, x=None, derivative="none", absolute=False,
                   quad=None):
    """Velocity averages along a ray at times ``t_samples``.

    The average is rho_0 (massless) or int . dv/v0 (massive).
    ``derivative``: ``none``, ``dt`` (d_t of the average) or ``nu``
    (nu_rho . d = (t d_t + x . d_x)/rho of the average).  Derivatives are
    exact: the (t, x) derivatives of f are taken from its jet and averaged
    over v at fixed (t, x).
    """
    n = F.n
    t = np.asarray(t_samples, dtype=float).reshape(-1)
    if x is None:
        x = np.zeros((t.size, n))
    x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), (t.size, n)).copy()
    quad = quad or QuadratureSpec()
    spec = MomentSpec(kind=_average_kind(F), absolute=absolute, quad=quad)
    if derivative == "none":
        return np.asarray(velocity_average(F, spec, t, x).value, dtype=float)
    if derivative not in ("dt", "nu"):
        raise UsageError(f"unknown derivative {derivative!r}; expected none, dt or nu")
    if derivative == "nu" and F.m == 0:
        raise UsageError("the hyperboloidal normal derivative is defined for massive laws")
    pf = F.phase_function()
    unit = [tuple(int(j == k) for j in range(2 * n + 1)) for k in range(n + 1)]

    def integrand(Z):
        jet = pf.jet(Z, 1)
        if derivative == "dt":
            return jet[unit[0]]
        tt, xx = Z[:, 0], Z[:, 1:n + 1]
        rho = np.sqrt(tt * tt - np.sum(xx * xx, axis=1))
        s = tt * jet[unit[0]]
        for k in range(1, n + 1):
            s = s + xx[:, k - 1] * jet[unit[k]]
        return s / rho

    res = velocity_average(F, spec, t, x, integrand=integrand, symmetric=True)
    return np.asarray(res.value, dtype=float)


# ----------------------------------------------------------------------------
# Klainerman-Sobolev normalizations


def _refine_grid(values):
    """Insert geometric (or arithmetic, at 0) midpoints."""
    vals = sorted(set(float(v) for v in values))
    out = list(vals)
    for a, b in zip(vals[:-1], vals[1:]):
        out.append(math.sqrt(a * b) if a > 0 else 0.5 * (a + b))
    return sorted(set(out))


def _direction(n, direction):
    if direction is None:
        e = np.zeros(n)
        e[0] = 1.0
        return e
    e = np.asarray(direction, dtype=float)
    return e / np.linalg.norm(e)


def _massless_points(n, times, offsets, direction):
    e = _direction(n, direction)
    pts = []
    for t in times:
        pts.append((t, 0.0))
        for c in offsets:
            if t - c > 0:
                pts.append((t, t - c))
    T = np.array([p[0] for p in pts])
    R = np.array([p[1] for p in pts])
    return T, R[:, None] * e[None, :], R


def _ks_massless_values(F, times, offsets, direction, quad):
    n = F.n
    T, X, R = _massless_points(n, times, offsets, direction)
    spec = MomentSpec(kind="vabs", absolute=True, quad=quad)
    rho = np.asarray(velocity_average(F, spec, T, X).value, dtype=float)
    weight = (1.0 + np.abs(T - R)) * (1.0 + T + R) ** (n - 1)
    return T, R, rho * weight


def ks_check_massless(F: DistributionField, times=None, offsets=None, direction=None,
                      quad=None, norm=None, order=None):
    """sup of rho_0(|f|)(1 + |t - r|)(1 + t + r)^(n-1) / ||f||_{K,n}.

    Samples lie on the ray x = 0 and on the near-cone rays |x| = t - c.
    The sample set is refined by inserting midpoints in t and in c; the
    relative change of the supremum is the refinement delta.  For the free
    law the norm is conserved and evaluated at t = 0.
    """
    cfg = DEFAULT_CONFIG
    times = tuple(times or cfg.ks_times)
    offsets = tuple(offsets or cfg.ks_offsets)
    quad = quad or QuadratureSpec()
    if F.m != 0:
        raise UsageError("ks_check_massless needs a massless law")
    order = F.n if order is None else order
    if F.is_zero:
        return KSReport(0.0, 0.0, 0.0, 0.0, 0)
    if norm is None:
        if F.law.kind != "free":
            raise UsageError("pass the norm explicitly for non-free laws")
        norm = norm_K(F, order, 0.0).value
    if not (np.isfinite(norm) and norm > 0):
        raise DomainError("norm is not finite and positive")
    T, R, vals = _ks_massless_values(F, times, offsets, direction, quad)
    T2, R2, vals2 = _ks_massless_values(F, _refine_grid(times), _refine_grid(offsets), direction, quad)
    sup, sup2 = float(vals.max()) / norm, float(vals2.max()) / norm
    k = int(np.argmax(vals2))
    table = [(float(a), float(b), float(c) / norm) for a, b, c in zip(T, R, vals)]
    delta = abs(sup2 - sup) / sup if sup > 0 else 0.0
    return KSReport(sup, sup2, delta, float(norm), int(T.size), (float(T2[k]), float(R2[k])), table)


def _massive_points(n, times, fractions, direction):
    e = _direction(n, direction)
    pts = []
    for t in times:
        for lam in fractions:
            r = lam * t
            if t * t - r * r >= 1.0:
                pts.append((t, r))
    T = np.array([p[0] for p in pts])
    R = np.array([p[1] for p in pts])
    return T, R[:, None] * e[None, :], R


def _ks_massive_values(F, times, fractions, direction, quad):
    n = F.n
    T, X, R = _massive_points(n, times, fractions, direction)
    spec = MomentSpec(kind="dmu", absolute=True, quad=quad)
    avg = np.asarray(velocity_average(F, spec, T, X).value, dtype=float)
    return T, R, avg * (1.0 + T) ** n


KS_MASSIVE_QUAD = QuadratureSpec(x_radial=8, x_panels=4, x_polar=6, x_fibre=8,
                                 v_radial=12, v_polar=8, v_fibre=8)


def ks_check_massive(F: DistributionField, times=None, fractions=None, direction=None,
                     quad=None, norm=None, order=None, norm_quad=KS_MASSIVE_QUAD):
    """sup of (int |f| dv/v0)(1 + t)^n / ||f||_{P,n} over points of the
    rays |x| = lambda t inside the future of H_1, with midpoint refinement."""
    cfg = DEFAULT_CONFIG
    times = tuple(times or cfg.massive_times)
    fractions = tuple(fractions or cfg.massive_fractions)
    quad = quad or QuadratureSpec()
    if not F.m > 0:
        raise UsageError("ks_check_massive needs a massive law")
    order = F.n if order is None else order
    if F.is_zero:
        return KSReport(0.0, 0.0, 0.0, 0.0, 0)
    if norm is None:
        if F.law.kind != "free":
            raise UsageError("pass the norm explicitly for non-free laws")
        norm = norm_P(F, order, 1.0, norm_quad).value
    if not (np.isfinite(norm) and norm > 0):
        raise DomainError("norm is not finite and positive")
    T, R, vals = _ks_massive_values(F, times, fractions, direction, quad)
    T2, R2, vals2 = _ks_massive_values(F, _refine_grid(times), _refine_grid(fractions), direction, quad)
    sup, sup2 = float(vals.max()) / norm, float(vals2.max()) / norm
    k = int(np.argmax(vals2))
    table = [(float(a), float(b), float(c) / norm) for a, b, c in zip(T, R, vals)]
    delta = abs(sup2 - sup) / sup if sup > 0 else 0.0
    return KSReport(sup, sup2, delta, float(norm), int(T.size), (float(T2[k]), float(R2[k])), table)


# ----------------------------------------------------------------------------
# decay exponents


def interior_decay(F: DistributionField, times, window=None, predicted=None, quad=None,
                   refine=True):
    """Fit of the x = 0 average (rho_0(|f|) or int |f| dv/v0) against t.

    ``refinement_delta`` is the exponent change when all quadrature node
    counts are doubled.
    """
    quad = quad or QuadratureSpec()
    vals = average_series(F, times, absolute=True, quad=quad)
    rep = decay_fit(list(zip(times, vals)), window, predicted)
    if refine:
        vals2 = average_series(F, times, absolute=True, quad=quad.refined(2))
        rep.refinement_delta = abs(decay_fit(list(zip(times, vals2)), window).exponent - rep.exponent)
    return rep


def improved_derivative_decay(F: DistributionField, times, derivative=None, window=None,
                              quad=None):
    """Decay of one derivative of the x = 0 average against the base rate.

    Massless laws use d_t rho_0(f), massive laws nu_rho . d of int f dv/v0
    (which is d_t at x = 0).  Samples whose sign differs from the last one
    are excluded and counted.  Returns ``(base, derivative)`` reports; with
    ``derivative='none'`` both are the base fit.
    """
    quad = quad or QuadratureSpec()
    if derivative is None:
        derivative = "dt" if F.m == 0 else "nu"
    times = np.asarray(times, dtype=float)
    base_vals = average_series(F, times, quad=quad)
    p, v, exb = _exclude_crossings(times, base_vals)
    base = decay_fit(list(zip(p, v)), window)
    base.excluded = exb
    if derivative == "none":
        return base, base
    dvals = average_series(F, times, derivative=derivative, quad=quad)
    p, v, exd = _exclude_crossings(times, dvals)
    der = decay_fit(list(zip(p, v)), window, predicted=base.exponent - 1.0)
    der.excluded = exd
    return base, der


# ----------------------------------------------------------------------------
# radial integral lemma


def appendix_b_integral(alpha, beta, n, t):
    """int_0^inf r^(n-1) dr / ((1 + t + r)^alpha (1 + |t - r|)^beta)."""
    if not alpha + beta > n:
        raise UsageError("the integral converges only for alpha + beta > n")
    f = lambda r: r ** (n - 1) / ((1.0 + t + r) ** alpha * (1.0 + abs(t - r)) ** beta)
    edges = sorted({0.0, max(t - 1.0, 0.0), t, t + 1.0, 2.0 * t + 2.0})
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    total += integrate.quad(f, edges[-1], np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return total


def appendix_b_bound(alpha, beta, n, t):
    """Claimed profile t^(n-alpha-beta)(1 + t^(beta-1)), or
    t^(n-alpha-1)(1 + log(1 + t)) when beta = 1."""
    t = np.asarray(t, dtype=float)
    if beta == 1:
        return t ** (n - alpha - 1.0) * (1.0 + np.log1p(t))
    return t ** (n - alpha - beta) * (1.0 + t ** (beta - 1.0))


def appendix_b_check(alpha, beta, n, t_samples=None):
    """Ratio of the radial integral to its claimed profile over ``t_samples``
    (default 31 log-spaced points in [1, 1e3]).  ``band`` is max/min over
    all samples, ``late_band`` over t >= 10 and ``decade_band`` the worst
    max/min within one decade."""
    if not alpha + beta > n:
        raise UsageError("the lemma requires alpha + beta > n")
    if t_samples is None:
        t_samples = np.geomspace(1.0, 1e3, 31)
    t = np.asarray(t_samples, dtype=float)
    if np.any(t <= 0):
        raise UsageError("samples must be positive")
    lhs = np.array([appendix_b_integral(alpha, beta, n, s) for s in t])
    ratio = lhs / appendix_b_bound(alpha, beta, n, t)
    late = ratio[t >= 10.0]
    late_band = float(late.max() / late.min()) if late.size else float("nan")
    decades = []
    for k in range(int(np.floor(np.log10(t.min()))), int(np.ceil(np.log10(t.max())))):
        sel = (t >= 10.0 ** k) & (t <= 10.0 ** (k + 1))
        if np.sum(sel) >= 2:
            decades.append(float(ratio[sel].max() / ratio[sel].min()))
    decade_band = max(decades) if decades else float("nan")
    return AppendixBReport(float(alpha), float(beta), int(n), beta == 1, t.tolist(), lhs.tolist(),
                           ratio.tolist(), float(ratio.max()), float(ratio.min()),
                           float(ratio.max() / ratio.min()), late_band, decade_band)


# ----------------------------------------------------------------------------
# exact algebra and weights


def algebra_checks(n=3):
    """Exact commutator classifications and bracket closure."""
    out = []
    bad = [Z.name for Z in catalog("P^", n, 1) if transport_commutator(Z, 1).kind != "zero"]
    out.append(CheckResult.compare("[T_1, P^] = 0", len(bad), 0, "==", "exact", failures=bad))
    bad = [Z.name for Z in catalog("K^", n, 0) if transport_commutator(Z, 0).kind != "zero"]
    out.append(CheckResult.compare("[T_0, K^] = 0", len(bad), 0, "==", "exact", failures=bad))
    for m in (0, 1):
        c = transport_commutator(base_field("S", n, m), m)
        ok = c.kind == "transport" and c.coefficient == 1
        out.append(CheckResult.compare(f"[T_{m}, S] = T_{m}", int(not ok), 0, "==", "exact",
                                       classification=c.label()))
    c = transport_commutator(euler_v_field(n, 0), 0)
    ok = c.kind == "transport" and c.coefficient == -1
    out.append(CheckResult.compare("[T_0, v.d_v] = -T_0", int(not ok), 0, "==", "exact",
                                   classification=c.label()))
    rows = bracket_table("K^0", n, 0)
    bad = []
    for a, b, dec in rows:
        if dec is None or not all(isinstance(v, Fraction) for v in dec.coeffs.values()):
            bad.append(f"[{a},{b}]")
    out.append(CheckResult.compare("K^0 bracket closure", len(bad), 0, "==", "exact",
                                   brackets=len(rows), failures=bad))
    return out


def _pythagorean_velocity(n):
    return {1: ((3,), 3), 2: ((3, 4), 5), 3: ((2, 3, 6), 7), 4: ((1, 2, 2, 4), 5)}[n]


def weight_checks(n=3, wave=None, samples=64, tol=1e-10, seed=0):
    """k_0 weights along free massless characteristics (exact rationals) and
    kappa_0 weights along perturbed massless characteristics."""
    out = []
    v, v0 = _pythagorean_velocity(n)
    v = tuple(Fraction(c) for c in v)
    v0 = Fraction(v0)
    x = tuple(Fraction(k + 1, 3) * (-1) ** k for k in range(n))
    t = Fraction(1, 2)
    worst = Fraction(0)
    weights = weight_catalog(n, 0, "k_0")
    for w in weights:
        ref = weight_eval_exact(w, t, x, v, v0)
        for s in (Fraction(1), Fraction(7, 3), Fraction(-5, 2), Fraction(40)):
            xs = tuple(xi + s * vi / v0 for xi, vi in zip(x, v))
            d = abs(weight_eval_exact(w, t + s, xs, v, v0) - ref)
            worst = max(worst, d)
    out.append(CheckResult.compare("k_0 drift along free characteristics", float(worst), 0.0, "==",
                                   "exact", weights=len(weights)))
    if wave is None:
        from .waves import RadialMode3
        if n != 3:
            return out
        wave = WaveField(3, (RadialMode3(0.1, 1.0, 0.5),))
    rng = np.random.default_rng(seed)
    tt = rng.uniform(2.0, 10.0, samples)
    xx = rng.normal(size=(samples, n)) * 2.0
    vv = rng.normal(size=(samples, n))
    from .kinetic import make_datum
    datum = make_datum("zero", n)
    _, rec = evolve_vn_massless(wave, datum, tt, xx, vv, rtol=tol, atol=tol)
    kap = weight_catalog(n, 0, "kappa_0")
    drift = 0.0
    for w in kap:
        end = w.poly(rec.end_t, rec.end_x, rec.end_v, np.linalg.norm(rec.end_v, axis=1))
        foot = w.poly(rec.foot_t, rec.foot_x, rec.foot_v, np.linalg.norm(rec.foot_v, axis=1))
        scale = 1.0 + np.abs(end)
        drift = max(drift, float(np.max(np.abs(end - foot) / scale)))
    cfg = DEFAULT_CONFIG
    out.append(CheckResult.compare("kappa_0 drift along perturbed characteristics", drift,
                                   cfg.weight_drift_factor * tol, "<=", "config",
                                   integrator_tol=tol, characteristics=samples))
    return out


# ----------------------------------------------------------------------------
# conservation, averaging, identities


CONSERVATION_QUAD = QuadratureSpec(x_radial=48, x_panels=4, v_radial=48, v_polar=32)


def conservation_checks(F_massless=None, F_massive=None, times=(0.0, 1.0, 2.0, 5.0, 10.0),
                        rhos=(1.0, 2.0, 4.0, 8.0), tol=None, quad=CONSERVATION_QUAD):
    """Relative variation of ||f||_{K,0}(t) and of int_{H_rho} chi_m dmu.

    The leaves use radial panels: the support of the free solution spreads
    with t (or rho), and a single Gauss panel loses accuracy on it.
    """
    from .kinetic import make_datum
    tol = DEFAULT_CONFIG.conservation_tol if tol is None else tol
    if F_massless is None:
        F_massless = DistributionField(make_datum("shell-in-v", 2), Law.free(0.0))
    if F_massive is None:
        F_massive = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0), "H1")
    out = []
    vals = [norm_K(F_massless, 0, t, quad).value for t in times]
    var = (max(vals) - min(vals)) / max(abs(v) for v in vals)
    out.append(CheckResult.compare("||f||_K0 conservation", var, tol, "<", "config",
                                   times=list(times), values=vals))
    vals = [norm_P(F_massive, 0, r, quad).value for r in rhos]
    var = (max(vals) - min(vals)) / max(abs(v) for v in vals)
    out.append(CheckResult.compare("int chi_m conservation", var, tol, "<", "config",
                                   rhos=list(rhos), values=vals))
    return out


def averaging_checks(F=None, fields=None, tol=None, points=None):
    """Residuals of the averaging/commutation identities at sample points."""
    from .kinetic import make_datum
    tol = DEFAULT_CONFIG.commutator_tol if tol is None else tol
    if F is None:
        F = DistributionField(make_datum("gaussian-xv", 3), Law.free(0.0))
    n = F.n
    if fields is None:
        fields = ["dt", "dx1", "R12", "B1"] + (["S"] if F.m == 0 else [])
    if points is None:
        t = np.array([0.5, 1.0, 2.0])
        x = np.array([[0.3, -0.2, 0.1, 0.0][:n], [1.0, 0.5, -0.4, 0.2][:n], [-0.7, 1.1, 0.6, 0.3][:n]])
    else:
        t, x = points
    out = []
    for Z in fields:
        res = average_commutation_residual(F, Z, t, x)
        scale = 1.0 + np.abs(velocity_average(F, MomentSpec(kind="v0", window="ball"), t, x).value)
        out.append(CheckResult.compare(f"averaging identity {Z}", float(np.max(res / scale)), tol,
                                       "<", "config"))
    return out


def identity_checks(n=3, tol=1e-10, seed=0):
    """Residuals of the Minkowski vector-field identities at random points."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.5, 5.0, 32)
    x = rng.normal(size=(32, n))
    out = []
    for name in sorted(IDENTITIES):
        res, rejected = minkowski_identity_residual(name, t, x)
        out.append(CheckResult.compare(f"identity {name}", res, tol, "<", "config", rejected=rejected))
    return out


# ----------------------------------------------------------------------------
# wave machinery


def wave_checks(wave: WaveField, rhos=(1.0, 2.0, 3.0, 4.0), cfg=DEFAULT_CONFIG, seed=0):
    """Box residual, hyperboloidal energy flux, decay normalization and null
    decomposition of an exact radial mode in n = 3."""
    if wave.n != 3 or not wave.radial:
        raise UsageError("wave checks need a radial mode in n = 3")
    rng = np.random.default_rng(seed)
    out = []
    t = rng.uniform(0.5, 8.0, 200)
    x = rng.normal(size=(200, 3)) * rng.uniform(0.0, 4.0, (200, 1))
    x[:4] = [[0, 0, 0], [1e-3, 0, 0], [0.2, 0.1, 0], [0.49, 0, 0]]
    box, scale = box_residual(wave, t, x)
    out.append(CheckResult.compare("box residual (relative)", float(np.max(np.abs(box) / scale)),
                                   cfg.wave_box_tol, "<", "config"))
    energies = [wave_energy_hyperboloid(wave, 0, r).energy for r in rhos]
    var = (max(energies) - min(energies)) / max(energies)
    out.append(CheckResult.compare("E_0 flux identity across rho", var, cfg.wave_flux_tol, "<",
                                   "config", rhos=list(rhos), energies=energies))
    energy = wave_energy_hyperboloid(wave, 2, 1.0).energy

    def decay_sup(times):
        pts_t, pts_x = [], []
        for s in times:
            for lam in (0.0, 0.3, 0.6, 0.9):
                r = lam * s
                if s - r > 0.05:
                    pts_t.append(s)
                    pts_x.append([r, 0.0, 0.0])
        return wave_decay_checks(wave, 2, np.array(pts_t), np.array(pts_x), energy=energy)[0]

    times = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    s1, s2 = decay_sup(times), decay_sup(_refine_grid(times))
    delta = abs(s2 - s1) / s1 if s1 > 0 else 0.0
    out.append(CheckResult.compare("wave decay normalized sup (refinement)", delta,
                                   cfg.refinement_tol, "<", "config", sup=s1, refined_sup=s2))
    tt = rng.uniform(1.0, 10.0, 200)
    xx = rng.normal(size=(200, 3)) * rng.uniform(0.1, 1.0, (200, 1)) * tt[:, None]
    vv = rng.normal(size=(200, 3))
    parts = null_decomposition(wave, tt, xx, vv)
    T0 = transport_of_phi(wave, 0.0, tt, xx, vv)
    g = wave.gradient(tt, xx)
    scale = 1.0 + np.linalg.norm(vv, axis=1) * np.abs(g).sum(axis=1) * (1.0 + tt)
    err = float(np.max(np.abs(sum(parts) - T0) / scale))
    out.append(CheckResult.compare("null decomposition reconstruction", err, cfg.wave_null_tol,
                                   "<", "config"))
    return out


# ----------------------------------------------------------------------------
# Vlasov-Nordstrom checks


VN_QUAD = QuadratureSpec(x_radial=12, x_polar=6, x_fibre=8, v_radial=12, v_polar=6, v_fibre=8)


def _zero_wave(n):
    return WaveField(n, ())


def vn_massless_checks(wave: WaveField, datum, cfg=DEFAULT_CONFIG, epsilon=1e-2, N=1, q=1,
                       quad=VN_QUAD, ks_times=(1.0, 2.0, 5.0, 10.0, 20.0, 50.0)):
    """Boundedness, sqrt(eps) growth scaling and pointwise decay for the
    massless Vlasov-Nordstrom law with a prescribed radial wave.

    ``wave`` is a template rescaled to wave energy ``epsilon`` and
    ``epsilon/4``.  Norms are E_{N,q} on Sigma_t; growth exponents are
    fitted to E_{N,q}(t) divided by the same norm of the unperturbed flow
    evaluated with identical rules (a constant in exact arithmetic).
    """
    if datum.n != 3 or not wave.radial:
        raise UsageError("the massless Vlasov-Nordstrom checks need n = 3 and a radial wave")
    times = [float(t) for t in cfg.vn_times]
    zero = DistributionField(datum, Law.vn_massless(_zero_wave(3)))
    amplitudes = [epsilon, epsilon / 4.0] if not wave.is_zero else [0.0, 0.0]
    fields = {a: DistributionField(datum, Law.vn_massless(wave.calibrated(a) if a else _zero_wave(3)))
              for a in set(amplitudes)}
    reports: Dict[float, List[NormReport]] = {a: [] for a in fields}
    base = []
    for t in times:
        base.append(norm_ENq(zero, N, q, t, quad))
        for a, F in fields.items():
            reports[a].append(base[-1] if a == 0.0 else norm_ENq(F, N, q, t, quad))
    out = []

    def low(rep):
        return sum(v for k, v in rep.by_order.items() if k[1] == 0)

    F_main = fields[amplitudes[0]]
    e10 = np.array([low(r) for r in reports[amplitudes[0]]])
    start = e10[0]
    later = e10[np.array(times) >= 1.0]
    ratio = float(later.max() / start)
    c = math.log(ratio) / math.sqrt(epsilon) if epsilon > 0 and ratio > 0 else 0.0
    out.append(CheckResult.compare(f"E_{{{N},0}} bounded by {cfg.vn_bound_factor}x initial", ratio,
                                   cfg.vn_bound_factor, "<=", "config", measured_c=c,
                                   times=times, values=e10.tolist()))
    gammas = {}
    series = {}
    for a in fields:
        rel = np.array([r.value / b.value for r, b in zip(reports[a], base)])
        series[a] = rel.tolist()
        gammas[a] = decay_fit(list(zip(times, rel)), cfg.vn_window).exponent
    g1, g2 = gammas[amplitudes[0]], gammas[amplitudes[1]]
    if wave.is_zero:
        out.append(CheckResult.compare(f"E_{{{N},{q}}} growth exponent (zero wave)", abs(g1), 1e-8,
                                       "<=", "config"))
    else:
        ratio_g = g1 / g2 if g2 != 0 else float("inf")
        out.append(CheckResult.compare(f"E_{{{N},{q}}} growth exponent ratio eps/(eps/4)", ratio_g,
                                       cfg.vn_ratio_window, "in", "config", gamma_eps=g1,
                                       gamma_eps4=g2, window=cfg.vn_window, relative_series=series,
                                       times=times))
    norm0 = reports[amplitudes[0]][0].value
    ks = ks_check_massless(F_main, ks_times, cfg.ks_offsets, quad=QuadratureSpec(), norm=norm0)
    out.append(CheckResult.compare("pointwise two-factor sup (refinement)", ks.refinement_delta,
                                   cfg.refinement_tol, "<", "config", sup=ks.sup,
                                   refined_sup=ks.refined_sup, normalization=f"E_{{{N},{q}}}(0)"))
    return out


def _conjugation_drift(F, samples, seed, tol):
    """Max over characteristics of |I(checkpoint) - I(end)| / max|I| with
    I = f exp(-(n+1) phi)."""
    n = F.n
    wave = F.law.wave
    rng = np.random.default_rng(seed)
    xf = rng.normal(size=(samples, n)) * 0.6
    vf = rng.normal(size=(samples, n)) * 0.8
    tf = np.sqrt(1.0 + np.sum(xf * xf, axis=1))
    w = vf / np.sqrt(F.m ** 2 + np.sum(vf * vf, axis=1))[:, None]
    s = rng.uniform(5.0, 20.0, samples)
    te, xe = tf + s, xf + s[:, None] * w
    rho_e = np.sqrt(te * te - np.sum(xe * xe, axis=1))
    ckpts = [1.5, 2.0, 3.0, 5.0, 8.0]
    vals, rec = evolve_vn_massive_prescribed(wave, F, te, xe, vf, rtol=tol, atol=tol,
                                             checkpoints=ckpts)
    I_end = vals * np.exp(-(n + 1) * wave(te, xe))
    scale = max(float(np.max(np.abs(I_end))), 1e-300)
    drift = np.zeros(samples)
    for level_rho, ct, cx, cv in rec.checkpoints:
        inside = level_rho < rho_e - 1e-12
        if not np.any(inside):
            continue
        idx = np.nonzero(inside)[0]
        v2, _ = evolve_vn_massive_prescribed(wave, F, ct[idx], cx[idx], cv[idx], rtol=tol, atol=tol)
        I = v2 * np.exp(-(n + 1) * wave(ct[idx], cx[idx]))
        drift[idx] = np.maximum(drift[idx], np.abs(I - I_end[idx]) / scale)
    return drift


def vn_massive_prescribed_checks(wave: WaveField, datum, cfg=DEFAULT_CONFIG, epsilon=1e-2,
                                 times=None, rhos=(2.0, 3.0, 4.0, 6.0, 8.0), samples=32, seed=0,
                                 tol=1e-11, quad=None, compare_half=False):
    """Conjugation invariant, x = 0 decay exponent and L2 decay for the
    massive transport with a prescribed wave (data on H_1, m = 1)."""
    n = datum.n
    if times is None:
        times = np.geomspace(cfg.massive_window[0], cfg.massive_window[1], 7)
    quad = quad or QuadratureSpec()
    wf = wave.calibrated(epsilon) if not wave.is_zero else wave
    F = DistributionField(datum, Law.vn_massive(wf, 1.0), "H1", tol=tol)
    out = []
    drift = _conjugation_drift(F, samples, seed, tol)
    out.append(CheckResult.compare("conjugation invariant drift", float(drift.max()), cfg.drift_tol,
                                   "<", "config", characteristics=samples, integrator_tol=tol))
    vals = average_series(F, times, absolute=True, quad=quad)
    rep = decay_fit(list(zip(times, vals)), cfg.massive_window, predicted=-n)
    lo = -n - cfg.massive_loss_lo
    hi = -n + cfg.massive_loss_hi
    l2 = [l2_hyperboloid(F, (), r, quad=VN_QUAD) for r in rhos]
    l2fit = decay_fit(list(zip(rhos, l2)), None)
    details = dict(stderr=rep.stderr, values=rep.values, times=rep.parameters,
                   l2_rhos=list(rhos), l2_values=l2, l2_exponent=l2fit.exponent)
    if compare_half and not wave.is_zero:
        Fh = DistributionField(datum, Law.vn_massive(wave.calibrated(epsilon / 2), 1.0), "H1", tol=tol)
        vh = average_series(Fh, times, absolute=True, quad=quad)
        eh = decay_fit(list(zip(times, vh)), cfg.massive_window).exponent
        details["half_eps_exponent"] = eh
        details["loss_narrows"] = bool(abs(eh + n) <= abs(rep.exponent + n))
    out.append(CheckResult.compare("x=0 decay exponent of int |f| dv/v0", rep.exponent, (lo, hi),
                                   "in", "config", **details))
    return out
