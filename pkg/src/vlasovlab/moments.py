"""Velocity averages of distribution functions.

Averages are tensor-product Gauss rules in polar velocity coordinates.  The
rule is chosen per point from the footprint of the data:

* ``ball``: |v| <= V with the full direction sphere (massless data,
  sources, or on request);
* ``wball`` (massive): the velocities reaching (t, x) from a footprint of
  radius R form a ball of radius R/t around x/t in the variable w = v/v0;
  polar rays from x/t are clipped to that ball and to the truncation ball
  |v| <= V, and dv = m^n (1-|w|^2)^(-(n+2)/2) dw;
* ``cap`` (massless, footprint of radius R): only directions with
  cos(theta) >= (|x|^2 + t^2 - R^2)/(2 t |x|) around x/|x| contribute;
* ``graded`` (massless, algebraically decaying data): geometrically graded
  polar panels around x/|x|;
* ``zero``: (t, x) outside the massless support shell.

For integrands invariant under rotations fixing x (isotropic data, radial
weights) the fibre sphere is collapsed; at x = 0 the direction sphere is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ToleranceError, UsageError
from .fields import base_field
from .geometry import QuadratureSpec, _fibre_rule, _leggauss, axis_frame, sphere_area
from .kinetic import H1_SLACK, DistributionField, lifted_bank

__all__ = [
    "MomentSpec",
    "MomentResult",
    "MOMENT_KINDS",
    "velocity_rule",
    "velocity_average",
    "rho_m",
    "rho_0",
    "mass_average",
    "particle_current",
    "stress_energy",
    "chi_m",
    "divergence_residual",
    "average_commutation_residual",
    "coercivity_gaps",
]

MOMENT_KINDS = ("dmu", "vabs", "v0", "dv", "chi")
# power of |v| carried by each measure near v = 0 (massless case)
_KIND_POWER = {"dmu": -1, "vabs": 1, "v0": 1, "dv": 0, "chi": 1}
_CHUNK_NODES = 1 << 18
_GRADED_PANELS = 6


@dataclass(frozen=True)
class MomentSpec:
    """Weight and quadrature of a velocity average.

    ``kind``: ``dmu`` (dv/v0), ``vabs`` (|v| dv), ``v0`` (v0 dv), ``dv``,
    ``chi`` ((t v0 - x.v)/rho dv).  ``components`` multiplies by
    v^{mu_1}..v^{mu_p} (0 denotes v0).  ``weight(t, x, v, v0)`` is an
    optional extra factor whose behaviour |v|^weight_power near v = 0 is
    declared for the integrability check.  ``window='ball'`` disables the
    footprint windows (smooth dependence of the rule on (t, x)).
    """

    kind: str = "dmu"
    components: tuple = ()
    absolute: bool = False
    weight: Optional[Callable] = field(default=None, compare=False)
    weight_power: float = 0.0
    window: str = "auto"
    quad: QuadratureSpec = QuadratureSpec()

    def __post_init__(self):
        if self.kind not in MOMENT_KINDS:
            raise UsageError(f"unknown moment kind {self.kind!r}; choose from {MOMENT_KINDS}")
        if self.window not in ("auto", "ball"):
            raise UsageError("window must be 'auto' or 'ball'")
        object.__setattr__(self, "components", tuple(int(c) for c in self.components))

    @property
    def v_power(self):
        """Homogeneity of the weight in |v| near v = 0 for m = 0."""
        return _KIND_POWER[self.kind] + len(self.components) + self.weight_power

    @property
    def large_v_power(self):
        """Growth of the weight in |v| at large |v|."""
        return _KIND_POWER[self.kind] + len(self.components) + max(self.weight_power, 0.0)

    def check_integrable(self, F: DistributionField):
        """Reject massless averages whose weight is not integrable at v = 0."""
        if F.m > 0 or F.datum.vanishes_near_v0 or F.is_zero:
            return
        if any(c < 0 or c > F.n for c in self.components):
            raise UsageError("component index out of range")
        if F.n + self.v_power <= 0:
            raise UsageError(
                f"weight |v|^{self.v_power:g} is not integrable at v = 0 in dimension {F.n} "
                "for data not vanishing near v = 0")


@dataclass
class MomentResult:
    """Values (P,) or (P, k) with relative-tail bounds (P,)."""

    value: np.ndarray
    tail: np.ndarray
    modes: np.ndarray

    def __array__(self, dtype=None):
        return np.asarray(self.value, dtype=dtype)

    def __float__(self):
        return float(np.asarray(self.value).reshape(-1)[0])


# ----------------------------------------------------------------------------
# rules


def _points(t, x, n):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[-1] != n:
        raise UsageError(f"points must have {n} spatial components")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    P = max(t.shape[0], x.shape[0])
    return np.broadcast_to(t, (P,)).copy(), np.broadcast_to(x, (P, n)).copy()


def _truncation(F, spec):
    d = F.datum
    if d.decay == "compact":
        V = d.v_radius
    else:
        V = spec.quad.v_radius * d.v_scale
    if F.law.kind == "vn_massless":
        V *= 1.25
    return V


def _direction_rule(n, axis, edges, k_polar, k_fibre, reduced):
    """Per-point product rules on polar caps around ``axis``.

    ``edges`` (P, E+1) are polar panel edges.  Returns dirs (P, K, n) and
    weights (P, K).
    """
    P = axis.shape[0]
    if n == 1:
        dirs = np.broadcast_to(np.array([[1.0], [-1.0]]), (P, 2, 1))
        return dirs, np.ones((P, 2))
    gx, gw = _leggauss(int(k_polar))
    a, b = edges[:, :-1, None], edges[:, 1:, None]
    th = (0.5 * (b - a) * gx + 0.5 * (a + b)).reshape(P, -1)
    wt = (0.5 * (b - a) * gw).reshape(P, -1) * np.sin(th) ** (n - 2)
    if reduced:
        sub = np.zeros((1, n - 1))
        sub[0, 0] = 1.0
        ws = np.array([sphere_area(n - 2)])
    else:
        sub, ws = _fibre_rule(n - 1, k_fibre)
    Kp, Kf = th.shape[1], ws.size
    local = np.empty((P, Kp, Kf, n))
    local[..., 0] = np.cos(th)[:, :, None]
    local[..., 1:] = np.sin(th)[:, :, None, None] * sub[None, None, :, :]
    local = local.reshape(P, Kp * Kf, n)
    H = axis_frame(axis)
    dirs = np.einsum("pij,pkj->pki", H, local)
    return dirs, (wt[:, :, None] * ws[None, None, :]).reshape(P, -1)


def _collapsed(n, P):
    dirs = np.zeros((P, 1, n))
    dirs[:, 0, 0] = 1.0
    return dirs, np.full((P, 1), sphere_area(n - 1))


def _window_radius(F):
    R = F.footprint_radius
    if F.law.kind == "vn_massive":
        R = 1.25 * R + 0.5
    return R


def _classify(F, spec, t, x, symmetric):
    """Mode per point: 0 zero, 1 ball, 2 wball, 3 cap, 4 graded."""
    P = t.shape[0]
    r = np.linalg.norm(x, axis=1)
    modes = np.ones(P, dtype=int)
    aux = np.full(P, np.pi)
    if spec.window == "ball" or F.law.kind == "duhamel":
        return modes, aux
    if F.m > 0:
        R = _window_radius(F)
        modes[:] = 2
        aux[:] = np.where(t > 0, R / np.where(t > 0, t, 1.0), np.inf)
        return modes, aux
    if F.n == 1:
        return modes, aux
    R = F.footprint_radius
    if not np.isfinite(R) or F.datum.decay == "powerlaw":
        sel = (r > 0) & (t > 0)
        modes[sel] = 4
        aux[sel] = np.minimum(np.pi / 4, 1.0 / (1.0 + t[sel]))
        return modes, aux
    pos = t > 0
    rs = np.where(r > 0, r, 1.0)
    ts = np.where(pos, t, 1.0)
    c = (r * r + t * t - R * R) / (2.0 * ts * rs)
    on_axis = r == 0
    zero = pos & ((on_axis & (t > R)) | (~on_axis & (c >= 1.0)))
    cap = pos & ~on_axis & (c > -1.0) & (c < 1.0)
    modes[zero] = 0
    modes[cap] = 3
    aux[cap] = np.arccos(c[cap])
    return modes, aux


def velocity_rule(F: DistributionField, spec: MomentSpec, t, x, mode, aux, collapse=False,
                  reduced=False):
    """Velocity nodes (P, K, n) and weights (P, K) including dv."""
    n, q = F.n, spec.quad
    P = t.shape[0]
    r = np.linalg.norm(x, axis=1)
    axis = np.where(r[:, None] > 0, x, np.eye(n)[0])
    if mode == 2:
        ts = np.where(t > 0, t, 1.0)
        center = np.where((t > 0)[:, None], x / ts[:, None], 0.0)
        axis = np.where(r[:, None] > 0, x, np.eye(n)[0])
        edges = np.tile([0.0, np.pi], (P, 1))
    elif mode == 3:
        edges = np.stack([np.zeros(P), aux], axis=1)
    elif mode == 4:
        ratio = (np.pi / aux) ** (1.0 / (_GRADED_PANELS - 1))
        edges = np.concatenate([np.zeros((P, 1)),
                                aux[:, None] * ratio[:, None] ** np.arange(_GRADED_PANELS)], axis=1)
        edges[:, -1] = np.pi
    else:
        edges = np.tile([0.0, np.pi], (P, 1))
    if collapse:
        dirs, wd = _collapsed(n, P)
    else:
        dirs, wd = _direction_rule(n, axis, edges, q.v_polar, q.v_fibre, reduced)
    s_edges = np.linspace(0.0, 1.0, q.v_panels + 1)
    gx, gw = _leggauss(q.v_radial)
    s = (0.5 * np.diff(s_edges)[:, None] * gx + 0.5 * (s_edges[:-1] + s_edges[1:])[:, None]).ravel()
    ws = (0.5 * np.diff(s_edges)[:, None] * gw).ravel()
    if mode == 2:
        # rays c + s*omega, s in [0, a], clipped to the truncation ball |w| <= wV
        m = F.m
        Vt = _truncation(F, spec)
        wV = Vt / math.sqrt(m * m + Vt * Vt)
        cw = np.einsum("pi,pki->pk", center, dirs)
        disc = cw * cw - (np.sum(center * center, axis=1)[:, None] - wV * wV)
        root = np.sqrt(np.maximum(disc, 0.0))
        lo = np.maximum(-cw - root, 0.0)
        hi = np.minimum(-cw + root, aux[:, None])
        length = np.where((disc > 0) & (hi > lo), hi - lo, 0.0)
        sr = lo[:, None, :] + length[:, None, :] * s[None, :, None]
        w = center[:, None, None, :] + sr[..., None] * dirs[:, None, :, :]
        w = w.reshape(P, -1, n)
        W = (length[:, None, :] * ws[None, :, None] * sr ** (n - 1) * wd[:, None, :]).reshape(P, -1)
        w2 = np.minimum(np.sum(w * w, axis=2), wV * wV)
        V = m * w / np.sqrt(1.0 - w2)[..., None]
        W = W * m ** n * (1.0 - w2) ** (-(n + 2) / 2.0)
        return V, W
    Vt = _truncation(F, spec)
    rad = Vt * s
    V = (rad[None, :, None, None] * dirs[:, None, :, :]).reshape(P, -1, n)
    wr = Vt * ws * rad ** (n - 1)
    W = (wr[None, :, None] * wd[:, None, :]).reshape(P, -1)
    return V, W


def _weight_values(F, spec, t, x, V):
    """Kind weight times components and custom weight at nodes (P, K)."""
    n = F.n
    v0 = np.sqrt(F.m ** 2 + np.sum(V * V, axis=2))
    safe = np.where(v0 > 0, v0, 1.0)
    if spec.kind == "dmu":
        W = np.where(v0 > 0, 1.0 / safe, 0.0)
    elif spec.kind in ("vabs",):
        W = np.sqrt(np.sum(V * V, axis=2))
    elif spec.kind == "v0":
        W = v0
    elif spec.kind == "dv":
        W = np.ones_like(v0)
    else:
        rho = np.sqrt(t * t - np.sum(x * x, axis=1))
        W = (t[:, None] * v0 - np.einsum("pi,pki->pk", x, V)) / rho[:, None]
    for c in spec.components:
        W = W * (v0 if c == 0 else V[:, :, c - 1])
    if spec.weight is not None:
        T = np.broadcast_to(t[:, None], v0.shape)
        X = np.broadcast_to(x[:, None, :], V.shape)
        W = W * spec.weight(T.reshape(-1), X.reshape(-1, n), V.reshape(-1, n),
                            v0.reshape(-1)).reshape(v0.shape)
    return W


def _tail(F, spec, mode):
    d = F.datum
    if mode == 0 or d.decay == "zero":
        return 0.0
    if mode == 2:
        return d.x_tail(d.x_radius) + d.v_tail(_truncation(F, spec), spec.large_v_power)
    Vt = _truncation(F, spec)
    if F.law.kind == "vn_massless":
        Vt /= 1.25
    vt = d.v_tail(Vt, spec.large_v_power)
    if mode == 3:
        vt += d.x_tail(F.footprint_radius)
    return vt


def velocity_average(F: DistributionField, spec: MomentSpec, t, x, integrand=None,
                     check_tail=True, chunk_nodes=_CHUNK_NODES, symmetric=None):
    """Velocity average of f (or of ``integrand``) at spacetime points.

    ``integrand(Z)`` maps phase points (N, 2n+1) to (N,) or (N, k) values;
    the default is the distribution function itself.  Returns a
    :class:`MomentResult` whose ``tail`` is the analytic relative bound of
    the truncated mass; a bound above ``spec.quad.tol`` raises
    ToleranceError when ``check_tail``.  ``symmetric=True`` declares a
    custom integrand invariant under rotations fixing x (reduced rules).
    """
    n = F.n
    t, x = _points(t, x, n)
    spec.check_integrable(F)
    if spec.kind == "chi" and np.any(t * t - np.sum(x * x, axis=1) <= 0):
        raise DomainError("chi_m needs points inside the light cone")
    if F.surface == "H1" and np.any(t * t - np.sum(x * x, axis=1) < 1.0 - H1_SLACK * (1.0 + t * t)):
        raise DomainError("evaluation point not in the future of H1")
    if symmetric is None:
        symmetric = integrand is None
    symmetric = (symmetric and F.isotropic and spec.weight is None
                 and all(c == 0 for c in spec.components))
    fn = integrand if integrand is not None else F.evaluate_points
    P = t.shape[0]
    modes, aux = _classify(F, spec, t, x, symmetric)
    r = np.linalg.norm(x, axis=1)
    collapse = symmetric & (r == 0)
    values = None
    tails = np.zeros(P)
    for mode in np.unique(modes):
        for col in (False, True):
            idx = np.nonzero((modes == mode) & (collapse == col))[0]
            if idx.size == 0:
                continue
            tails[idx] = _tail(F, spec, mode)
            if mode == 0:
                continue
            probe_V, _ = velocity_rule(F, spec, t[idx[:1]], x[idx[:1]], mode, aux[idx[:1]], col, symmetric)
            K = probe_V.shape[1]
            step = max(1, chunk_nodes // K)
            for s0 in range(0, idx.size, step):
                sub = idx[s0:s0 + step]
                V, W = velocity_rule(F, spec, t[sub], x[sub], mode, aux[sub], col, symmetric)
                W = W * _weight_values(F, spec, t[sub], x[sub], V)
                p, K = W.shape
                keep = W.reshape(-1) != 0
                Z = np.concatenate([np.repeat(t[sub], K)[:, None],
                                    np.repeat(x[sub], K, axis=0), V.reshape(-1, n)], axis=1)
                vals = np.asarray(fn(Z[keep]) if keep.any() else np.zeros((0,)))
                full = np.zeros((p * K,) + vals.shape[1:])
                full[keep] = vals
                if spec.absolute:
                    full = np.abs(full)
                full = full.reshape((p, K) + vals.shape[1:])
                acc = np.einsum("pk,pk...->p...", W, full)
                if values is None:
                    values = np.zeros((P,) + acc.shape[1:])
                values[sub] = acc
    if values is None:
        values = np.zeros(P)
    if check_tail and np.any(tails > spec.quad.tol):
        raise ToleranceError(f"velocity truncation tail {tails.max():.3e} exceeds tolerance "
                             f"{spec.quad.tol:.1e}", estimate=float(tails.max()))
    return MomentResult(values, tails * np.max(np.abs(values.reshape(P, -1)), axis=1), modes)


# ----------------------------------------------------------------------------
# named moments


def _spec(kind, quad=None, **kw):
    return MomentSpec(kind=kind, quad=quad or QuadratureSpec(), **kw)


def rho_m(F, t, x, absolute=False, quad=None):
    """rho_m(f) = int f v0 dv."""
    return velocity_average(F, _spec("v0", quad, absolute=absolute), t, x).value


def rho_0(F, t, x, absolute=False, quad=None):
    """rho_0(f) = int f |v| dv."""
    return velocity_average(F, _spec("vabs", quad, absolute=absolute), t, x).value


def mass_average(F, t, x, absolute=False, quad=None):
    """int f dv/v0."""
    return velocity_average(F, _spec("dmu", quad, absolute=absolute), t, x).value


def particle_current(F, mu, t, x, quad=None):
    """N^mu = int f v^mu dv/v0."""
    return velocity_average(F, _spec("dmu", quad, components=(mu,)), t, x).value


def stress_energy(F, mu, nu, t, x, quad=None, window="auto"):
    """T^{mu nu} = int f v^mu v^nu dv/v0 (index 0 is v0)."""
    comps = tuple(sorted((mu, nu)))
    return velocity_average(F, _spec("dmu", quad, components=comps, window=window), t, x).value


def chi_m(F, t, x, absolute=False, quad=None):
    """chi_m(f) = int f (t v0 - x.v)/rho dv inside the light cone."""
    return velocity_average(F, _spec("chi", quad, absolute=absolute), t, x).value


def _fd_derivative(g, t, x, axis, h=None):
    """Central difference with one Richardson level of g(t, x) along axis 0..n."""
    t, x = _points(t, x, x.shape[-1] if np.ndim(x) else 1)
    coords = np.concatenate([t[:, None], x], axis=1)
    if h is None:
        h = np.finfo(float).eps ** (1.0 / 5.0) * (1.0 + np.abs(coords[:, axis]))

    def shifted(k):
        c = coords.copy()
        c[:, axis] += k * h
        return np.asarray(g(c[:, 0], c[:, 1:]))

    d1 = (shifted(1) - shifted(-1)) / (2 * h)
    d2 = (shifted(0.5) - shifted(-0.5)) / h
    return (4.0 * d2 - d1) / 3.0


def divergence_residual(F, nu, t, x, quad=None):
    """d_mu T^{mu nu} by finite differences (ball rule for smooth dependence)."""
    n = F.n
    t, x = _points(t, x, n)
    total = np.zeros(t.shape[0])
    for mu in range(n + 1):
        g = lambda tt, xx, mu=mu: stress_energy(F, mu, nu, tt, xx, quad=quad, window="ball")
        total += _fd_derivative(g, t, x, mu)
    return np.abs(total)


def _base_coefficients(Z, t, x, n):
    """Spacetime components (P, n+1) of a base field at points."""
    comps = Z.comps[: n + 1]
    zeros = np.zeros_like(x)
    return np.stack([c(t, x, zeros, np.ones_like(t)) * np.ones_like(t) if c.terms
                     else np.zeros_like(t) for c in comps], axis=1)


def average_commutation_residual(F: DistributionField, Z, t, x, quad=None):
    """|Z[rho(f)] - rho(Z^ f) - correction| with rho = rho_m (rho_0 for m = 0).

    Z is a base field name (``dt``, ``dx1``, ``R12``, ``B1``, ``S``).  The
    left side is a finite difference of the average, the right side a
    quadrature of the lifted derivative; corrections are 2 int v^i f dv = 2 rho(v^i f/v0)
    for boosts and (n+1) rho_0(f) for S (massless only).
    """
    n = F.n
    t, x = _points(t, x, n)
    quad = quad or QuadratureSpec()
    base = _parse_base(Z, n, F.m)
    kind, i = base
    spec = MomentSpec(kind="v0", window="ball", quad=quad)
    avg = lambda tt, xx: velocity_average(F, spec, tt, xx).value
    coeffs = _base_coefficients(base_field(*_base_args(Z, n, F.m)), t, x, n)
    lhs = np.zeros(t.shape[0])
    for mu in range(n + 1):
        if np.any(coeffs[:, mu] != 0):
            lhs += coeffs[:, mu] * _fd_derivative(avg, t, x, mu)
    lifted = _lifted_name(Z)
    rhs = velocity_average(F, spec, t, x,
                           integrand=lambda P: lifted_bank(F, [(lifted,)], P)[:, 0]).value
    if kind == "boost":
        rhs = rhs + 2.0 * velocity_average(F, replace(spec, kind="dv", components=(i,)), t, x).value
    elif kind == "scaling":
        rhs = rhs + (n + 1) * velocity_average(F, spec, t, x).value
    return np.abs(lhs - rhs)


def _parse_base(name, n, m):
    if name == "dt":
        return ("translation", 0)
    if name.startswith("dx"):
        return ("translation", int(name[2:]))
    if name.startswith("R"):
        return ("rotation", None)
    if name.startswith("B"):
        return ("boost", int(name[1:]))
    if name == "S":
        if m > 0:
            raise UsageError("the scaling identity holds for massless averages only")
        return ("scaling", None)
    raise UsageError(f"unknown base field {name!r}")


def _base_args(name, n, m):
    if name == "dt":
        return ("dt", n, m)
    if name.startswith("dx"):
        return ("dx", n, m, int(name[2:]))
    if name.startswith("R"):
        return ("rot", n, m, int(name[1]), int(name[2]))
    if name.startswith("B"):
        return ("boost", n, m, int(name[1:]))
    return ("S", n, m)


def _lifted_name(name):
    if name == "dt" or name.startswith("dx"):
        return name
    if name == "S":
        return "S^"
    return name + "^"


def coercivity_gaps(F, t, x, quad=None):
    """Margins of the chi_m lower bounds at points (all >= 0 up to quadrature).

    Returns a dict with ``mass`` = chi_m(|f|) - (m^2/2) int |f| dv/v0,
    ``cone`` = chi_m(|f|) - rho/(2(t+r)) rho_m(|f|) and ``l1`` =
    chi_m(|f|)/m - int |f| dv (massive only).
    """
    n = F.n
    t, x = _points(t, x, n)
    quad = quad or QuadratureSpec()
    r = np.linalg.norm(x, axis=1)
    rho = np.sqrt(t * t - r * r)
    chi = chi_m(F, t, x, absolute=True, quad=quad)
    out = {
        "mass": chi - 0.5 * F.m ** 2 * mass_average(F, t, x, absolute=True, quad=quad),
        "cone": chi - rho / (2.0 * (t + r)) * rho_m(F, t, x, absolute=True, quad=quad),
    }
    if F.m > 0:
        l1 = velocity_average(F, _spec("dv", quad, absolute=True), t, x).value
        out["l1"] = chi / F.m - l1
    return out
