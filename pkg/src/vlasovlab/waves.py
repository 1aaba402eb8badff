"""Exact solutions of the free wave equation and their vector-field calculus.

Two mode families are available:

* plane modes ``A cos(xi.x - |xi| t + theta)`` in any dimension;
* for n = 3, radial modes ``A (F(t-r) - F(t+r)) / r`` with the profile
  ``F(s) = P(s) exp(-((s-c)/w)^2)``.  Near r = 0 the mode is evaluated from
  its even Taylor series ``-2 sum_k F^(2k+1)(t) r^(2k) / (2k+1)!`` so that
  every partial derivative is smooth and exact.

All partials are exact derivatives of these closed forms (forward-mode
automatic differentiation in float64).  Spacetime points are rows
``z = (t, x^1, ..., x^n)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as Pn

import jax
import jax.numpy as jnp

from .errors import DomainError, UsageError
from .fields import DiffOp, LiftedField, base_field, catalog
from .geometry import FoliationLeaf, build_leaf, QuadratureSpec, sphere_area
from .jets import batched, jax_jet

__all__ = [
    "PlaneMode",
    "RadialMode3",
    "WaveField",
    "WaveEnergyReport",
    "MAX_ORDER",
    "eval_phi_partials",
    "eval_Z_alpha_phi",
    "transport_of_phi",
    "null_decomposition",
    "wave_energy_hyperboloid",
    "wave_energy_slab",
    "wave_decay_checks",
    "box_residual",
    "spacetime_field",
    "WAVES",
    "make_wave",
]

MAX_ORDER = 12
_SERIES_TERMS = 22


@dataclass(frozen=True)
class PlaneMode:
    amplitude: float
    xi: tuple
    phase: float = 0.0

    @property
    def omega(self):
        return float(np.linalg.norm(self.xi))

    def fn(self, z):
        n = len(self.xi)
        xi = jnp.asarray(self.xi, dtype=float)
        return self.amplitude * jnp.cos(jnp.dot(xi, z[1:n + 1]) - self.omega * z[0] + self.phase)


@dataclass(frozen=True)
class RadialMode3:
    """A (F(t-r) - F(t+r))/r with F(s) = P(s) exp(-((s-c)/w)^2), n = 3."""

    amplitude: float = 1.0
    center: float = 3.0
    width: float = 0.5
    poly: tuple = (1.0,)

    def profile_derivative_coeffs(self, j):
        """Coefficients (in u = (s-c)/w) of the polynomial Q_j with
        F^(j)(s) = Q_j(u) exp(-u^2)."""
        return _profile_coeffs(self.center, self.width, tuple(self.poly), j)

    def profile(self, s, j=0):
        """F^(j)(s), numpy."""
        u = (np.asarray(s, dtype=float) - self.center) / self.width
        return Pn.polyval(u, self.profile_derivative_coeffs(j)) * np.exp(-u * u)

    def _F(self, s, j):
        u = (s - self.center) / self.width
        c = jnp.asarray(self.profile_derivative_coeffs(j))
        return jnp.polyval(c[::-1], u) * jnp.exp(-u * u)

    def series_matrix(self):
        """C[k, j]: coefficient of u^j r^(2k) in the r = 0 series of the mode
        (before the factor -2 exp(-u^2))."""
        return _series_matrix(self.center, self.width, tuple(self.poly))

    def fn(self, z):
        t = z[0]
        x = z[1:4]
        r2 = jnp.dot(x, x)
        eps = self.width
        small = r2 < eps * eps
        # series branch: -2 sum_k F^(2k+1)(t) r^(2k) / (2k+1)!, Horner in u then r^2
        r2s = jnp.where(small, r2, 0.0)
        C = self.series_matrix()
        u = (t - self.center) / self.width
        # lax.scan keeps the traced graph small, so compiling derivatives is cheap
        acc, _ = jax.lax.scan(lambda a, col: (a * u + col, None), jnp.zeros(C.shape[0]) * u,
                              jnp.asarray(C.T[::-1]))
        series, _ = jax.lax.scan(lambda a, c: (a * r2s + c, None), 0.0 * u, acc[::-1])
        series = -2.0 * series * jnp.exp(-u * u)
        rs = jnp.sqrt(jnp.where(small, eps * eps, r2))
        exact = (self._F(t - rs, 0) - self._F(t + rs, 0)) / rs
        return self.amplitude * jnp.where(small, series, exact)


@lru_cache(maxsize=None)
def _series_matrix(c, w, poly):
    rows = [_profile_coeffs(c, w, poly, 2 * k + 1) / float(math.factorial(2 * k + 1))
            for k in range(_SERIES_TERMS)]
    J = max(len(r) for r in rows)
    C = np.zeros((_SERIES_TERMS, J))
    for k, r in enumerate(rows):
        C[k, :len(r)] = r
    return C


@lru_cache(maxsize=None)
def _profile_coeffs(c, w, poly, j):
    # F(s) = P(s) G(u), u = (s-c)/w, G = exp(-u^2); express P in u first.
    p_u = np.zeros(1)
    for k, a in enumerate(poly):
        p_u = Pn.polyadd(p_u, a * Pn.polypow([c, w], k))
    # d/ds = (1/w) d/du, and d/du [Q e^{-u^2}] = (Q' - 2u Q) e^{-u^2}
    q = np.array(p_u, dtype=float)
    for _ in range(j):
        q = Pn.polysub(Pn.polyder(q) if q.size > 1 else [0.0], Pn.polymulx(2.0 * q)) / w
    return np.array(q, dtype=float)


@dataclass(frozen=True)
class WaveField:
    """Superposition of exact modes in spatial dimension n."""

    n: int
    modes: tuple = ()
    max_order: int = MAX_ORDER
    label: str = "wave"

    def __post_init__(self):
        for mode in self.modes:
            if isinstance(mode, PlaneMode) and len(mode.xi) != self.n:
                raise UsageError("plane-mode covector has wrong dimension")
            if isinstance(mode, RadialMode3) and self.n != 3:
                raise UsageError("radial modes are implemented for n = 3")

    @property
    def is_zero(self):
        return not self.modes or all(m.amplitude == 0 for m in self.modes)

    @property
    def finite_energy(self):
        return all(isinstance(m, RadialMode3) for m in self.modes)

    @property
    def radial(self):
        return all(isinstance(m, RadialMode3) for m in self.modes)

    def scaled(self, c):
        return replace(self, modes=tuple(replace(m, amplitude=m.amplitude * c) for m in self.modes))

    def fn(self, z):
        return _field_fn(self)(z)

    def __call__(self, t, x):
        Z = spacetime_points(t, x)
        return batched(_vmapped(self), Z)

    def gradient(self, t, x):
        """(N, n+1) array of (phi_t, phi_x1..)."""
        Z = spacetime_points(t, x)
        return batched(_vmapped_grad(self), Z)

    def hessian(self, t, x):
        Z = spacetime_points(t, x)
        return batched(_vmapped_hess(self), Z)

    def calibrated(self, energy):
        """Rescale so that the standard energy on {t = 0} equals ``energy``."""
        e1 = wave_energy_slab(self, 0.0)
        if e1 <= 0:
            raise UsageError("cannot calibrate a field with zero energy")
        return self.scaled(math.sqrt(energy / e1))


@lru_cache(maxsize=64)
def _field_fn(wf: WaveField):
    modes = wf.modes

    def fn(z):
        total = 0.0 * z[0]
        for mode in modes:
            total = total + mode.fn(z)
        return total

    return fn


@lru_cache(maxsize=64)
def _vmapped(wf):
    return jax.jit(jax.vmap(_field_fn(wf)))


@lru_cache(maxsize=64)
def _vmapped_grad(wf):
    return jax.jit(jax.vmap(jax.grad(_field_fn(wf))))


@lru_cache(maxsize=64)
def _vmapped_hess(wf):
    return jax.jit(jax.vmap(jax.hessian(_field_fn(wf))))


def spacetime_points(t, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
    return np.concatenate([t[:, None], x], axis=1)


def spacetime_field(kind, n, i=None, j=None) -> LiftedField:
    """Base field of the conformal-type algebra, acting on (t, x) functions."""
    return base_field(kind, n, 0, i, j)


# ----------------------------------------------------------------------------
# partials


@lru_cache(maxsize=256)
def _directional(wf, beta):
    f = _field_fn(wf)
    d = wf.n + 1
    for j, c in enumerate(beta):
        e = jnp.zeros(d).at[j].set(1.0)
        for _ in range(c):
            f = (lambda g, e: (lambda z: jax.jvp(g, (z,), (e,))[1]))(f, e)
    return jax.jit(jax.vmap(f))


def eval_phi_partials(wf: WaveField, beta, t, x):
    """Exact partial d^beta phi, beta = counts over (t, x^1..x^n)."""
    beta = tuple(int(b) for b in beta)
    if len(beta) != wf.n + 1:
        raise UsageError("multi-order must have n+1 entries")
    if sum(beta) > wf.max_order:
        raise UsageError(f"order {sum(beta)} exceeds supported order {wf.max_order}")
    Z = spacetime_points(t, x)
    return batched(_directional(wf, beta), Z)


def _spacetime_op(fields: Sequence[LiftedField], n):
    if not fields:
        return DiffOp.identity(n, 0)
    return DiffOp.from_multi_index(fields)


def _restrict(op: DiffOp, n):
    """Drop velocity slots from a DiffOp over base fields."""
    terms = {}
    for beta, c in op.terms.items():
        if any(beta[n + 1:]):
            raise UsageError("operator has velocity derivatives")
        terms[beta[: n + 1]] = c
    return terms


def _resolve_fields(alpha, n):
    fields = []
    table = {F.name: F for F in catalog("K", n)}
    for a in alpha:
        if isinstance(a, LiftedField):
            fields.append(a)
        elif a in table:
            fields.append(table[a])
        else:
            raise UsageError(f"unknown field {a!r}")
    return fields


def _ops_values(wf, ops, t, x, jet=None):
    """Evaluate a list of spacetime DiffOps on phi at points."""
    n = wf.n
    Z = spacetime_points(t, x)
    if jet is None:
        jet = jax_jet(_field_fn(wf), Z, max(op.order for op in ops))
    N = Z.shape[0]
    zeros = np.zeros((N, n))
    out = []
    for op in ops:
        total = np.zeros(N)
        for beta, c in op.terms.items():
            total = total + c(Z[:, 0], Z[:, 1:], zeros, np.ones(N)) * jet[beta[: n + 1]]
        out.append(total)
    return out


def eval_Z_alpha_phi(wf: WaveField, alpha, t, x, budget=6):
    """Z^alpha phi for a sequence of base fields (names like 'B1', 'S')."""
    if len(alpha) > budget:
        raise UsageError("multi-index exceeds the expansion budget")
    n = wf.n
    if not alpha:
        return wf(t, x)
    op = _spacetime_op(_resolve_fields(alpha, n), n)
    return _ops_values(wf, [op], t, x)[0]


def transport_of_phi(wf: WaveField, m, t, x, v):
    """T_m(phi) = v0 phi_t + v . grad phi."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    g = wf.gradient(t, x)
    v0 = np.sqrt(m * m + np.sum(v * v, axis=-1))
    return v0 * g[:, 0] + np.sum(v * g[:, 1:], axis=-1)


def null_decomposition(wf: WaveField, t, x, v):
    """Split T_0(phi) into outgoing, vector-field and weight parts.

    outgoing:  v0 (phi_t + x^i/|x| phi_i)
    fields:    -(v0/t) (x^i/|x|) (-x^j Om_ij + t Om_0i - x^i S) phi / (t + r)
               with Om_ij = x^j d_i - x^i d_j in this identity
    weight:    (v^i t - x^i v0)/t * phi_i
    """
    n = wf.n
    t = np.broadcast_to(np.asarray(t, dtype=float), np.atleast_2d(x).shape[:1])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0) or np.any(t == 0):
        raise DomainError("null decomposition needs |x| > 0 and t > 0")
    v0 = np.linalg.norm(v, axis=-1)
    g = wf.gradient(t, x)
    om = x / r[:, None]
    outgoing = v0 * (g[:, 0] + np.sum(om * g[:, 1:], axis=-1))
    # vector-field values at the point
    S = t * g[:, 0] + np.sum(x * g[:, 1:], axis=-1)
    B = t[:, None] * g[:, 1:] + x * g[:, :1]
    bracket = np.zeros_like(x)
    for i in range(n):
        acc = t * B[:, i] - x[:, i] * S
        for j in range(n):
            if j != i:
                rot_ij = x[:, j] * g[:, 1 + i] - x[:, i] * g[:, 1 + j]
                acc = acc - x[:, j] * rot_ij
        bracket[:, i] = acc / (t + r)
    fields_part = -(v0 / t) * np.sum(om * bracket, axis=-1)
    z = v * t[:, None] - x * v0[:, None]
    weight_part = np.sum(z / t[:, None] * g[:, 1:], axis=-1)
    return outgoing, fields_part, weight_part


def box_residual(wf: WaveField, t, x):
    """(box phi, scale) with box = -d_t^2 + Laplacian; scale = sum |d^2 phi|."""
    Hs = wf.hessian(t, x)
    d = np.diagonal(Hs, axis1=1, axis2=2)
    box = -d[:, 0] + np.sum(d[:, 1:], axis=1)
    return box, np.sum(np.abs(d), axis=1)


# ----------------------------------------------------------------------------
# energies


@dataclass
class WaveEnergyReport:
    rho: float
    order: int
    energy: float
    breakdown: dict = field(default_factory=dict)
    min_density: float = 0.0

    def to_dict(self):
        return dict(rho=self.rho, order=self.order, energy=self.energy,
                    breakdown=self.breakdown, min_density=self.min_density)


@lru_cache(maxsize=16)
def _order_ops(n, N):
    """Operators d_mu Z^alpha for all |alpha| <= N over the base algebra K."""
    fields = catalog("K", n)
    groups = []
    for k in range(N + 1):
        for seq in itertools.product(range(len(fields)), repeat=k):
            alpha = [fields[i] for i in seq]
            base = _spacetime_op(alpha, n)
            grads = []
            for mu in range(n + 1):
                d = base_field("dt", n) if mu == 0 else base_field("dx", n, 0, mu)
                grads.append(base.compose_left(d))
            groups.append(("".join(fields[i].name + "." for i in seq)[:-1] or "id", grads))
    return groups


def _energy_density(g, t, x, rho):
    """T[psi](d_t, nu_rho) in completed-square form; g = (psi_t, grad psi)."""
    r = np.linalg.norm(x, axis=-1)
    pt = g[:, 0]
    grad = g[:, 1:]
    safe = np.where(r > 0, r, 1.0)
    pr = np.where(r > 0, np.sum(x * grad, axis=-1) / safe, 0.0)
    ang = np.maximum(np.sum(grad * grad, axis=-1) - pr * pr, 0.0)
    return ((t - r) * (pt * pt + pr * pr) + r * (pt + pr) ** 2 + t * ang) / (2.0 * rho)


def wave_energy_hyperboloid(wf: WaveField, N, rho, leaf: FoliationLeaf = None,
                            extent=60.0, spec=None):
    """E_N[phi](rho) = sum_{|alpha|<=N} int_{H_rho} T[Z^alpha phi](d_t, nu_rho) dmu."""
    if leaf is None:
        spec = spec or QuadratureSpec(x_radial=48, x_panels=6)
        leaf = build_leaf("hyperboloid", rho, extent, spec, n=wf.n, reduced=wf.radial)
    if leaf.kind != "hyperboloid":
        raise UsageError("energy needs a hyperboloid leaf")
    if wf.is_zero:
        return WaveEnergyReport(rho, N, 0.0, {}, 0.0)
    breakdown = {}
    mins = []
    jet = jax_jet(_field_fn(wf), spacetime_points(leaf.t, leaf.x), N + 1)
    for name, grads in _order_ops(wf.n, N):
        vals = np.stack(_ops_values(wf, grads, leaf.t, leaf.x, jet), axis=1)
        dens = _energy_density(vals, leaf.t, leaf.x, leaf.value)
        mins.append(float(dens.min()))
        breakdown[name] = leaf.integrate(dens)
    total = float(sum(breakdown.values()))
    return WaveEnergyReport(float(rho), N, total, breakdown, min(mins))


def wave_energy_slab(wf: WaveField, t, extent=60.0, nodes=400):
    """Standard energy (1/2) int (phi_t^2 + |grad phi|^2) dx on {t = const}
    for radial fields (1D radial Gauss rule)."""
    if not wf.radial:
        raise UsageError("slab energy implemented for radial fields")
    n = wf.n
    r, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * extent * (r + 1.0)
    w = 0.5 * extent * w
    x = np.zeros((r.size, n))
    x[:, 0] = r
    g = wf.gradient(t, x)
    dens = 0.5 * np.sum(g * g, axis=1)
    return float(sphere_area(n - 1) * np.sum(w * r ** (n - 1) * dens))


def wave_decay_checks(wf: WaveField, N, t, x, energy=None, rho_energy=1.0):
    """Normalized suprema of |d Z^alpha phi| t^{(n-1)/2} (t-|x|)^{1/2} and of
    |phi| t^{(n-1)/2} / (t-|x|)^{1/2}, divided by sqrt(E_N).

    Returns (sup_derivative, sup_value, energy).
    """
    if not wf.finite_energy:
        raise UsageError("decay checks need a finite-energy (radial) field")
    n = wf.n
    t = np.asarray(t, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = t - np.linalg.norm(x, axis=-1)
    if np.any(u <= 0):
        raise DomainError("samples must lie inside the light cone")
    if wf.is_zero:
        return 0.0, 0.0, 0.0
    if energy is None:
        energy = wave_energy_hyperboloid(wf, N, rho_energy).energy
    root = math.sqrt(energy)
    sup_d = 0.0
    jet = jax_jet(_field_fn(wf), spacetime_points(t, x), N + 1)
    for name, grads in _order_ops(n, N):
        vals = np.stack(_ops_values(wf, grads, t, x, jet), axis=1)
        mag = np.linalg.norm(vals, axis=1)
        sup_d = max(sup_d, float(np.max(mag * t ** ((n - 1) / 2) * np.sqrt(u))))
    phi = wf(t, x)
    sup_v = float(np.max(np.abs(phi) * t ** ((n - 1) / 2) / np.sqrt(u)))
    return sup_d / root, sup_v / root, energy


# ----------------------------------------------------------------------------
# catalog


def _plane_packet(n, amplitude=1e-2, k=1.0, spread=0.25, modes=3):
    """Plane modes with wave vectors k(1 + spread j) e1, j = -(modes-1)/2..,
    weighted by exp(-j^2)."""
    if int(modes) < 1:
        raise UsageError("a packet needs at least one mode")
    out = []
    for idx in range(int(modes)):
        j = idx - (int(modes) - 1) / 2.0
        xi = (k * (1.0 + spread * j),) + (0.0,) * (n - 1)
        out.append(PlaneMode(amplitude * math.exp(-j * j), xi, 0.0))
    return WaveField(n, tuple(out), label="plane-packet")


def _radial3_bump(n, amplitude=1.0, center=3.0, width=0.5, energy=0.0):
    """RadialMode3; ``energy > 0`` calibrates the {t = 0} energy."""
    if n != 3:
        raise UsageError("radial3-bump is defined for n = 3")
    wf = WaveField(3, (RadialMode3(amplitude, center, width),), label="radial3-bump")
    return wf.calibrated(energy) if energy > 0 else wf


def _zero_wave(n):
    return WaveField(n, (), label="zero")


WAVES = {
    "plane-packet": (_plane_packet, dict(amplitude=1e-2, k=1.0, spread=0.25, modes=3),
                     "sum_j A exp(-j^2) cos(k_j x^1 - k_j t), k_j = k (1 + spread j); infinite energy"),
    "radial3-bump": (_radial3_bump, dict(amplitude=1.0, center=3.0, width=0.5, energy=0.0),
                     "A (F(t-r) - F(t+r))/r, F(s) = exp(-((s-center)/width)^2), n = 3; "
                     "energy > 0 rescales to that wave energy on t = 0"),
    "zero": (_zero_wave, dict(), "phi = 0"),
}


def make_wave(name, n, **params) -> WaveField:
    """Instantiate a catalog wave in dimension n."""
    if name not in WAVES:
        raise UsageError(f"unknown wave {name!r}; expected one of {sorted(WAVES)}")
    factory, defaults, _ = WAVES[name]
    unknown = set(params) - set(defaults)
    if unknown:
        raise UsageError(f"unknown parameters for {name}: {sorted(unknown)}")
    return factory(int(n), **{**defaults, **params})
