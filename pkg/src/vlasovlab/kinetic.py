"""Pointwise solution operators for the relativistic transport equations.

A :class:`DistributionField` couples an initial datum (on ``{t = 0}`` or on
the hyperboloid ``H_1``) with an evolution law:

* ``free``: T_m f = 0, solved by the straight characteristics;
* ``duhamel``: T_m f = v0 h, the datum part plus a Gauss-Legendre line
  integral of the source;
* ``vn_massless``: T_phi f = (n+1) f T_0(phi) for a prescribed wave phi,
  solved through g = exp(-(n+1) phi) f which is constant along the
  characteristics of T_phi = T_0 - T_0(phi) v.d_v;
* ``vn_massive``: the analogous massive law with
  T_phi = T_m - (T_m(phi) v^i + m^2 d_i phi) d_{v^i}, data on H_1.

Massless perturbed characteristics keep their direction and only rescale
|v| by exp(-(phi(t, x(t)) - phi(0, x(0)))), so that law also has a closed
form used as the exact derivative oracle; the characteristic integrator
path is kept for evaluation records and cross-checks.

Phase-space points are rows ``z = (t, x^1..x^n, v^1..v^n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import gammaincc

import jax
import jax.numpy as jnp

from .errors import DomainError, SingularCharacteristicError, ToleranceError, UsageError
from .fields import DiffOp, LiftedField, catalog, transport_commutator
from .jets import OperatorBank, PhaseFunction, batched
from .ode import integrate_batch
from .waves import WaveField

__all__ = [
    "Datum",
    "Source",
    "Law",
    "DistributionField",
    "CharacteristicRecord",
    "DATA",
    "SOURCES",
    "make_datum",
    "make_source",
    "free_evolve",
    "duhamel_evolve",
    "lifted_solution",
    "lifted_bank",
    "resolve_multi_index",
    "evolve_vn_massless",
    "evolve_vn_massive_prescribed",
    "h1_trace",
    "h1_footpoint",
]

# Effective radius of a unit Gaussian profile: exp(-37) < 1e-16.
GAUSS_CUTOFF = math.sqrt(37.0)
V_FLOOR = 1e-12
# relative slack for points on H_1 given in floating point
H1_SLACK = 1e-12


# ----------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Datum:
    """Scalar datum d(x, v) with decay metadata.

    ``decay`` is the declared class: ``gaussian`` (x and v Gaussian type),
    ``compact`` (exact zeros outside the x- and v-radii), ``powerlaw``
    (algebraic decay (1+|x|^2)^(-x_decay/2) in x) or ``zero``.  The radii
    are support radii for compact data and effective radii otherwise.
    """

    name: str
    n: int
    params: tuple
    decay: str
    x_radius: float
    v_radius: float
    x_scale: float = 1.0
    v_scale: float = 1.0
    v_power: int = 0
    isotropic: bool = True
    vanishes_near_v0: bool = False
    x_decay: Optional[float] = None
    x_class: Optional[str] = None
    fn: object = field(default=None, compare=False, hash=False, repr=False)

    @property
    def is_zero(self):
        return self.decay == "zero"

    def __call__(self, x, v):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        N = max(x.shape[0], v.shape[0])
        x = np.broadcast_to(x, (N, self.n))
        v = np.broadcast_to(v, (N, self.n))
        return batched(_datum_vmapped(self), x, v)

    def v_tail(self, V, extra_power=0.0):
        """Relative mass of |v| > V for the weight |v|^(n-1+extra_power)."""
        if self.decay in ("zero",):
            return 0.0
        if self.decay == "compact":
            return 0.0 if V >= self.v_radius else 1.0
        a = 0.5 * (self.n + extra_power + 2 * self.v_power)
        return float(gammaincc(a, (V / self.v_scale) ** 2))

    @property
    def x_kind(self):
        """Decay class in x alone (may be compact for Gaussian-in-v data)."""
        return self.x_class or self.decay

    def x_tail(self, R, extra_power=0.0):
        """Relative mass of |x| > R for the weight |x|^(n-1+extra_power)."""
        kind = self.x_kind
        if kind == "zero":
            return 0.0
        if kind == "compact":
            return 0.0 if R >= self.x_radius else 1.0
        if kind == "gaussian":
            return float(gammaincc(0.5 * (self.n + extra_power), (R / self.x_scale) ** 2))
        return 1.0

    def certify_support(self, samples=1000, seed=0):
        """Check that a compact datum vanishes outside its declared radii.

        Returns the number of samples checked; raises DomainError with the
        offending sample otherwise.
        """
        if self.decay != "compact":
            raise UsageError("support certificates need a compact datum")
        rng = np.random.default_rng(seed)
        half = samples // 2
        dx = _random_directions(rng, samples, self.n)
        dv = _random_directions(rng, samples, self.n)
        rx = self.x_radius * (1.0 + rng.uniform(0.0, 2.0, samples))
        rv = self.v_radius * rng.uniform(0.0, 3.0, samples)
        rx[half:] = self.x_radius * rng.uniform(0.0, 3.0, samples - half)
        rv[half:] = self.v_radius * (1.0 + rng.uniform(0.0, 2.0, samples - half))
        x = dx * rx[:, None]
        v = dv * rv[:, None]
        vals = self(x, v)
        bad = np.nonzero(vals != 0)[0]
        if bad.size:
            k = bad[0]
            raise DomainError(f"datum {self.name} nonzero outside its support at x={x[k]}, v={v[k]}")
        return samples


def _random_directions(rng, N, n):
    d = rng.normal(size=(N, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@lru_cache(maxsize=128)
def _datum_vmapped(d: Datum):
    return jax.jit(jax.vmap(d.fn))


def _bump(q):
    """exp(1 - 1/(1-q)) for q < 1 and exactly 0 otherwise."""
    inside = q < 1.0
    qs = jnp.where(inside, q, 0.0)
    return jnp.where(inside, jnp.exp(1.0 - 1.0 / (1.0 - qs)), 0.0)


def _gaussian_xv(n, amplitude=1.0, sx=1.0, sv=1.0):
    def fn(x, v):
        return amplitude * jnp.exp(-jnp.sum(x * x) / sx ** 2 - jnp.sum(v * v) / sv ** 2)

    return dict(decay="gaussian", x_radius=GAUSS_CUTOFF * sx, v_radius=GAUSS_CUTOFF * sv,
                x_scale=sx, v_scale=sv, fn=fn)


def _bump_compact_xv(n, amplitude=1.0, rx=1.0, rv=2.0):
    def fn(x, v):
        return amplitude * _bump(jnp.sum(x * x) / rx ** 2) * _bump(jnp.sum(v * v) / rv ** 2)

    return dict(decay="compact", x_radius=rx, v_radius=rv, x_scale=rx, v_scale=rv, fn=fn)


def _shell_in_v(n, amplitude=1.0, sx=1.0, sv=1.0, k=1):
    k = int(k)

    def fn(x, v):
        q = jnp.sum(v * v) / sv ** 2
        return amplitude * jnp.exp(-jnp.sum(x * x) / sx ** 2) * q ** k * jnp.exp(-q)

    return dict(decay="gaussian", x_radius=GAUSS_CUTOFF * sx,
                v_radius=sv * math.sqrt(37.0 + 2 * k * math.log(6.0 + k)),
                x_scale=sx, v_scale=sv, v_power=k, vanishes_near_v0=True, fn=fn)


def _powerlaw_x_shell_v(n, amplitude=1.0, sx=1.0, sv=1.0, delta=0.05, k=1):
    k = int(k)
    p = n + delta

    def fn(x, v):
        q = jnp.sum(v * v) / sv ** 2
        return amplitude * (1.0 + jnp.sum(x * x) / sx ** 2) ** (-0.5 * p) * q ** k * jnp.exp(-q)

    return dict(decay="powerlaw", x_radius=math.inf,
                v_radius=sv * math.sqrt(37.0 + 2 * k * math.log(6.0 + k)),
                x_scale=sx, v_scale=sv, v_power=k, vanishes_near_v0=True, x_decay=p, fn=fn)


def _compact_x_shell_v(n, amplitude=1.0, rx=1.0, sv=1.0, k=1):
    k = int(k)

    def fn(x, v):
        q = jnp.sum(v * v) / sv ** 2
        return amplitude * _bump(jnp.sum(x * x) / rx ** 2) * q ** k * jnp.exp(-q)

    return dict(decay="gaussian", x_radius=rx,
                v_radius=sv * math.sqrt(37.0 + 2 * k * math.log(6.0 + k)),
                x_scale=rx, v_scale=sv, v_power=k, vanishes_near_v0=True, x_class="compact", fn=fn)


def _zero(n):
    def fn(x, v):
        return 0.0 * (jnp.sum(x) + jnp.sum(v))

    return dict(decay="zero", x_radius=0.0, v_radius=0.0, fn=fn)


def _anisotropic_gaussian(n, amplitude=1.0, sx=1.0, sv=1.0, drift=0.5):
    def fn(x, v):
        shift = jnp.zeros(n).at[0].set(drift)
        return amplitude * jnp.exp(-jnp.sum(x * x) / sx ** 2 - jnp.sum((v - shift) ** 2) / sv ** 2)

    return dict(decay="gaussian", x_radius=GAUSS_CUTOFF * sx,
                v_radius=GAUSS_CUTOFF * sv + abs(drift), x_scale=sx, v_scale=sv,
                isotropic=False, fn=fn)


DATA = {
    "gaussian-xv": (_gaussian_xv, dict(amplitude=1.0, sx=1.0, sv=1.0),
                    "A exp(-|x|^2/sx^2 - |v|^2/sv^2); Gaussian class"),
    "bump-compact-xv": (_bump_compact_xv, dict(amplitude=1.0, rx=1.0, rv=2.0),
                        "A b(|x|^2/rx^2) b(|v|^2/rv^2), b(q) = exp(1 - 1/(1-q)); compact"),
    "shell-in-v": (_shell_in_v, dict(amplitude=1.0, sx=1.0, sv=1.0, k=1),
                   "A exp(-|x|^2/sx^2) q^k exp(-q), q = |v|^2/sv^2; vanishes near v = 0"),
    "powerlaw-x-shell-v": (_powerlaw_x_shell_v, dict(amplitude=1.0, sx=1.0, sv=1.0, delta=0.05, k=1),
                           "A (1+|x|^2/sx^2)^(-(n+delta)/2) q^k exp(-q); algebraic in x"),
    "compact-x-shell-v": (_compact_x_shell_v, dict(amplitude=1.0, rx=1.0, sv=1.0, k=1),
                          "A b(|x|^2/rx^2) q^k exp(-q); compact in x, vanishes near v = 0"),
    "drifting-gaussian": (_anisotropic_gaussian, dict(amplitude=1.0, sx=1.0, sv=1.0, drift=0.5),
                          "A exp(-|x|^2/sx^2 - |v - drift e1|^2/sv^2); not isotropic"),
    "zero": (_zero, dict(), "identically zero"),
}


def make_datum(name, n, **params) -> Datum:
    """Instantiate a catalog datum in dimension n."""
    if name not in DATA:
        raise UsageError(f"unknown datum {name!r}; expected one of {sorted(DATA)}")
    if not 1 <= int(n) <= 4:
        raise UsageError("dimension must be in 1..4")
    factory, defaults, _ = DATA[name]
    unknown = set(params) - set(defaults)
    if unknown:
        raise UsageError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**defaults, **params}
    meta = factory(int(n), **p)
    return Datum(name=name, n=int(n), params=tuple(sorted(p.items())), **meta)


# ----------------------------------------------------------------------------
# sources for the inhomogeneous law


@dataclass(frozen=True)
class Source:
    """Source h(s, x, v) of T_m f = v0 h."""

    name: str
    n: int
    params: tuple
    fn: object = field(default=None, compare=False, hash=False, repr=False)

    def __call__(self, s, x, v):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        N = max(x.shape[0], v.shape[0])
        s = np.broadcast_to(np.asarray(s, dtype=float), (N,))
        return batched(_source_vmapped(self), s, np.broadcast_to(x, (N, self.n)),
                       np.broadcast_to(v, (N, self.n)))


@lru_cache(maxsize=64)
def _source_vmapped(src: Source):
    return jax.jit(jax.vmap(src.fn))


def _src_zero(n):
    return lambda s, x, v: 0.0 * (s + jnp.sum(x) + jnp.sum(v))


def _src_velocity(n, amplitude=1.0, sv=1.0):
    return lambda s, x, v: amplitude * jnp.exp(-jnp.sum(v * v) / sv ** 2) + 0.0 * (s + jnp.sum(x))


def _src_time_linear(n, amplitude=1.0, sv=1.0):
    return lambda s, x, v: amplitude * s * jnp.exp(-jnp.sum(v * v) / sv ** 2) + 0.0 * jnp.sum(x)


def _src_pulse(n, amplitude=1.0, s0=1.0, tau=0.5, sx=1.0, sv=1.0, k=1):
    def fn(s, x, v):
        q = jnp.sum(v * v) / sv ** 2
        return (amplitude * jnp.exp(-((s - s0) / tau) ** 2 - jnp.sum(x * x) / sx ** 2)
                * q ** int(k) * jnp.exp(-q))

    return fn


SOURCES = {
    "zero": (_src_zero, dict(), "h = 0"),
    "velocity-gaussian": (_src_velocity, dict(amplitude=1.0, sv=1.0), "h = A exp(-|v|^2/sv^2)"),
    "time-linear": (_src_time_linear, dict(amplitude=1.0, sv=1.0), "h = A s exp(-|v|^2/sv^2)"),
    "pulse": (_src_pulse, dict(amplitude=1.0, s0=1.0, tau=0.5, sx=1.0, sv=1.0, k=1),
              "h = A exp(-((s-s0)/tau)^2 - |x|^2/sx^2) q^k exp(-q)"),
}


def make_source(name, n, fn=None, **params) -> Source:
    """Catalog source, or a custom jax-traceable ``fn(s, x, v)`` under ``name``."""
    if fn is not None:
        return Source(name, int(n), tuple(sorted(params.items())), fn)
    if name not in SOURCES:
        raise UsageError(f"unknown source {name!r}; expected one of {sorted(SOURCES)}")
    factory, defaults, _ = SOURCES[name]
    p = {**defaults, **params}
    return Source(name, int(n), tuple(sorted(p.items())), factory(int(n), **p))


# ----------------------------------------------------------------------------
# laws and distribution fields


LAWS = ("free", "duhamel", "vn_massless", "vn_massive")


@dataclass(frozen=True)
class Law:
    kind: str
    m: float = 0.0
    source: Optional[Source] = None
    wave: Optional[WaveField] = None

    def __post_init__(self):
        if self.kind not in LAWS:
            raise UsageError(f"unknown law {self.kind!r}; expected one of {LAWS}")
        if self.m < 0:
            raise UsageError("mass must be nonnegative")
        if self.kind == "duhamel" and self.source is None:
            raise UsageError("duhamel law needs a source")
        if self.kind.startswith("vn") and self.wave is None:
            raise UsageError("Vlasov-Nordstrom laws need a wave field")
        if self.kind == "vn_massless" and self.m != 0:
            raise UsageError("massless Vlasov-Nordstrom law needs m = 0")
        if self.kind == "vn_massive" and not self.m > 0:
            raise UsageError("massive Vlasov-Nordstrom law needs m > 0")

    @classmethod
    def free(cls, m=0.0):
        return cls("free", float(m))

    @classmethod
    def duhamel(cls, source, m=0.0):
        return cls("duhamel", float(m), source=source)

    @classmethod
    def vn_massless(cls, wave):
        return cls("vn_massless", 0.0, wave=wave)

    @classmethod
    def vn_massive(cls, wave, m=1.0):
        return cls("vn_massive", float(m), wave=wave)


DUHAMEL_NODES = 48


@dataclass(frozen=True)
class DistributionField:
    """Datum + law, evaluable at batched phase points.

    ``surface`` is ``t0`` ({t = 0}) or ``H1`` (t^2 - |x|^2 = 1; the datum is
    then a function of the spatial coordinate x of the H_1 point and v).
    """

    datum: Datum
    law: Law
    surface: str = "t0"
    tol: float = 1e-10

    def __post_init__(self):
        if self.surface not in ("t0", "H1"):
            raise UsageError("datum surface must be 't0' or 'H1'")
        if self.surface == "H1" and not self.law.m > 0:
            raise UsageError("H1 data need a massive law")
        if self.surface == "H1" and self.law.kind in ("duhamel", "vn_massless"):
            raise UsageError(f"law {self.law.kind} takes data on t = 0")
        if self.law.kind == "vn_massive" and self.surface != "H1":
            raise UsageError("massive Vlasov-Nordstrom data live on H1")
        if self.law.wave is not None and self.law.wave.n != self.datum.n:
            raise UsageError("wave field and datum have different dimensions")

    # -- metadata ---------------------------------------------------------
    @property
    def n(self):
        return self.datum.n

    @property
    def m(self):
        return self.law.m

    @property
    def isotropic(self):
        """Invariant under simultaneous rotations of x and v."""
        wave_ok = self.law.wave is None or self.law.wave.radial or self.law.wave.is_zero
        return self.datum.isotropic and wave_ok

    @property
    def is_zero(self):
        src_zero = self.law.source is None or self.law.source.name == "zero"
        return self.datum.is_zero and src_zero

    @property
    def exact(self):
        """Whether a closed form (exact derivative oracle) is available."""
        return self.law.kind != "vn_massive"

    @property
    def footprint_radius(self):
        """Effective x-radius of the data as seen from {t = 0} free streaming.

        For H_1 data supported in |x| <= R, particles satisfy
        |x - t v/v0| <= R + sqrt(1 + R^2).
        """
        R = self.datum.x_radius
        if self.surface == "H1":
            return R + math.sqrt(1.0 + R * R)
        return R

    # -- evaluation -------------------------------------------------------
    def fn_jax(self):
        return _closed_form(self)

    def phase_function(self):
        if self.exact:
            return PhaseFunction(2 * self.n + 1, fn_jax=self.fn_jax(),
                                 fn_np=lambda Z: self.evaluate_points(Z))
        return PhaseFunction(2 * self.n + 1, fn_np=lambda Z: self.evaluate_points(Z), max_order=2)

    def __call__(self, t, x, v):
        return self.evaluate_points(_stack(t, x, v, self.n))

    def evaluate_points(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        n = self.n
        if self.datum.is_zero and self.law.kind != "duhamel":
            return np.zeros(Z.shape[0])
        if self.law.kind == "vn_massive":
            vals, _ = evolve_vn_massive_prescribed(self.law.wave, self, Z[:, 0], Z[:, 1:n + 1],
                                                   Z[:, n + 1:], rtol=self.tol, atol=self.tol)
            return vals
        if self.surface == "H1":
            rho2 = Z[:, 0] ** 2 - np.sum(Z[:, 1:n + 1] ** 2, axis=1)
            if np.any(rho2 < 1.0 - H1_SLACK * (1.0 + Z[:, 0] ** 2)) or np.any(Z[:, 0] < 0):
                raise DomainError("evaluation point not in the future of H1")
        if self.law.kind == "duhamel":
            return _duhamel_adaptive(self, Z)
        return batched(_closed_vmapped(self), Z)


def _stack(t, x, v, n):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if x.shape[1] != n or v.shape[1] != n:
        raise UsageError(f"points must have spatial dimension {n}")
    N = max(x.shape[0], v.shape[0], np.size(t))
    x = np.broadcast_to(x, (N, n))
    v = np.broadcast_to(v, (N, n))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1) if np.ndim(t) else np.asarray(t, dtype=float), (N,))
    return np.concatenate([t[:, None], x, v], axis=1)


def _h1_foot_jax(t, x, w):
    """Backward time s >= 0 to reach H_1 along x - s w (jax, one point)."""
    ww = jnp.sum(w * w)
    b = t - jnp.sum(x * w)
    rho2m1 = t * t - jnp.sum(x * x) - 1.0
    disc = jnp.maximum(b * b - (1.0 - ww) * rho2m1, 0.0)
    return rho2m1 / (b + jnp.sqrt(disc))


def h1_footpoint(t, x, v, m):
    """Footpoint (t_f, x_f) on H_1 of the free massive characteristic."""
    t = np.asarray(t, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    w = v / np.sqrt(m * m + np.sum(v * v, axis=1, keepdims=True))
    ww = np.sum(w * w, axis=1)
    b = t - np.sum(x * w, axis=1)
    rho2m1 = t * t - np.sum(x * x, axis=1) - 1.0
    if np.any(rho2m1 < -H1_SLACK * (1.0 + t * t)):
        raise DomainError("point not in the future of H1")
    s = rho2m1 / (b + np.sqrt(np.maximum(b * b - (1.0 - ww) * rho2m1, 0.0)))
    xf = x - s[:, None] * w
    return np.sqrt(1.0 + np.sum(xf * xf, axis=1)), xf


@lru_cache(maxsize=128)
def _closed_form(F: DistributionField):
    n, m = F.n, F.m
    d = F.datum.fn
    kind = F.law.kind

    if kind == "vn_massless":
        phi = F.law.wave.fn

        def fn(z):
            t, x, v = z[0], z[1:n + 1], z[n + 1:]
            vhat = v / jnp.sqrt(jnp.sum(v * v))
            x0 = x - t * vhat
            delta = phi(z[:n + 1]) - phi(jnp.concatenate([jnp.zeros(1), x0]))
            return d(x0, v * jnp.exp(delta)) * jnp.exp((n + 1) * delta)

        return fn

    def free(z):
        t, x, v = z[0], z[1:n + 1], z[n + 1:]
        w = v / jnp.sqrt(m * m + jnp.sum(v * v))
        if F.surface == "H1":
            s = _h1_foot_jax(t, x, w)
            inside = t * t - jnp.sum(x * x) >= 1.0 - H1_SLACK * (1.0 + t * t)
            return jnp.where(inside, d(x - s * w, v), 0.0)
        return d(x - t * w, v)

    if kind == "free":
        return free
    h = F.law.source.fn
    gx, gw = np.polynomial.legendre.leggauss(DUHAMEL_NODES)
    gx, gw = jnp.asarray(gx), jnp.asarray(gw)

    def duhamel(z):
        t, x, v = z[0], z[1:n + 1], z[n + 1:]
        w = v / jnp.sqrt(m * m + jnp.sum(v * v))
        s = 0.5 * t * (gx + 1.0)
        vals = jax.vmap(lambda si: h(si, x - (t - si) * w, v))(s)
        return free(z) + 0.5 * t * jnp.sum(gw * vals)

    return duhamel


@lru_cache(maxsize=128)
def _closed_vmapped(F: DistributionField):
    return jax.jit(jax.vmap(_closed_form(F)))


def _duhamel_line(src: Source, m, Z, k):
    n = src.n
    t, x, v = Z[:, 0], Z[:, 1:n + 1], Z[:, n + 1:]
    w = v / np.sqrt(m * m + np.sum(v * v, axis=1, keepdims=True))
    gx, gw = np.polynomial.legendre.leggauss(k)
    s = 0.5 * t[:, None] * (gx[None, :] + 1.0)
    N = Z.shape[0]
    xs = x[:, None, :] - (t[:, None] - s)[:, :, None] * w[:, None, :]
    vals = src(s.ravel(), xs.reshape(-1, n), np.repeat(v, k, axis=0)).reshape(N, k)
    return 0.5 * t * np.sum(gw[None, :] * vals, axis=1)


def _duhamel_adaptive(F: DistributionField, Z, k0=32, k_max=1024):
    base = np.zeros(Z.shape[0])
    if not F.datum.is_zero:
        base = batched(_closed_vmapped(DistributionField(F.datum, Law.free(F.m), "t0")), Z)
    return base + duhamel_line_integral(F.law.source, F.m, Z, tol=F.tol, k0=k0, k_max=k_max)


def duhamel_line_integral(src: Source, m, Z, tol=1e-10, k0=32, k_max=1024):
    """Adaptive Gauss-Legendre quadrature of the Duhamel line integral.

    The node count doubles until two successive rules agree to
    ``tol * max(1, |value|)``; otherwise a ToleranceError is raised.
    """
    k = k0
    prev = _duhamel_line(src, m, Z, k)
    while k < k_max:
        k *= 2
        cur = _duhamel_line(src, m, Z, k)
        err = np.abs(cur - prev)
        if np.all(err <= tol * np.maximum(1.0, np.abs(cur))):
            return cur
        prev = cur
    raise ToleranceError("Duhamel quadrature did not converge", estimate=float(np.max(err)))


def free_evolve(F: DistributionField, t, x, v):
    """Free transport of the datum: d(x - t v/v0, v) (or from H_1)."""
    if F.law.kind != "free":
        raise UsageError("free_evolve needs a free law")
    return F(t, x, v)


def duhamel_evolve(source: Source, m, t, x, v, tol=1e-10):
    """Solution with zero data of T_m f = v0 h at the given points."""
    Z = _stack(t, x, v, source.n)
    return duhamel_line_integral(source, m, Z, tol=tol)


# ----------------------------------------------------------------------------
# lifted solutions


def resolve_multi_index(alpha, n, m=0.0):
    """LiftedFields for a multi-index given by names (``dx1``, ``B1^``, ``S``..)."""
    pool = {f.name: f for f in catalog("K^0", n, m)}
    pool.update({f.name: f for f in catalog("K", n, m)})
    out = []
    for a in alpha:
        if isinstance(a, LiftedField):
            out.append(a)
        elif a in pool:
            out.append(pool[a])
        else:
            raise UsageError(f"unknown field {a!r}; known: {sorted(pool)}")
    return out


def _check_commuting(fields, m):
    for f in fields:
        cls = transport_commutator(f, m)
        if cls.kind == "other":
            raise UsageError(f"{f.name} does not map free solutions to free solutions for m = {m}")


def lifted_solution(F: DistributionField, alpha, t, x, v, route="footpoint", method=None):
    """Z^alpha f at batched points.

    ``route='footpoint'`` (free laws) uses that Z^alpha f is again a free
    solution and evaluates the operator on the exact solution at the
    footpoint on the datum surface; there the time derivatives are those of
    the exact solution, i.e. d_t f = -(v/v0).grad f on {t = 0}.
    ``route='direct'`` applies the operator at the point itself.
    """
    n = F.n
    fields = resolve_multi_index(alpha, n, F.m)
    Z = _stack(t, x, v, n)
    if not fields:
        return F.evaluate_points(Z)
    if route not in ("footpoint", "direct"):
        raise UsageError("route must be 'footpoint' or 'direct'")
    op = DiffOp.from_multi_index(fields)
    if route == "footpoint":
        if F.law.kind != "free":
            raise UsageError("the footpoint route needs a free law")
        _check_commuting(fields, F.m)
        Z = _footpoint_rows(F, Z)
    pf = F.phase_function()
    jet = pf.jet(Z, op.order, method)
    return op(jet, Z[:, 0], Z[:, 1:n + 1], Z[:, n + 1:])


def _footpoint_rows(F, Z):
    n = F.n
    x, v = Z[:, 1:n + 1], Z[:, n + 1:]
    if F.surface == "H1":
        tf, xf = h1_footpoint(Z[:, 0], x, v, F.m)
    else:
        w = v / np.sqrt(F.m ** 2 + np.sum(v * v, axis=1, keepdims=True))
        tf, xf = np.zeros(Z.shape[0]), x - Z[:, :1] * w
    return np.concatenate([tf[:, None], xf, v], axis=1)


def lifted_bank(F: DistributionField, alphas, Z, route="direct", method=None, chunk=32768):
    """Z^alpha f for many multi-indices at once, sharing one jet per point.

    Returns an (N, len(alphas)) array.  The empty multi-index gives f.
    """
    n = F.n
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    m2 = None
    ops = []
    for alpha in alphas:
        fields = resolve_multi_index(alpha, n, F.m)
        if route == "footpoint":
            _check_commuting(fields, F.m)
        if fields:
            op = DiffOp.from_multi_index(fields)
            m2 = op.m2
        else:
            op = None
        ops.append(op)
    if m2 is None:
        m2 = catalog("K^0", n, F.m)[0].m2
    ops = [DiffOp.identity(n, m2) if op is None else op for op in ops]
    if route == "footpoint":
        if F.law.kind != "free":
            raise UsageError("the footpoint route needs a free law")
        Z = _footpoint_rows(F, Z)
    elif route != "direct":
        raise UsageError("route must be 'footpoint' or 'direct'")
    bank = OperatorBank(ops)
    pf = F.phase_function()
    out = np.empty((Z.shape[0], len(ops)))
    for s in range(0, Z.shape[0], chunk):
        B = Z[s:s + chunk]
        jet = pf.jet(B, bank.order, method)
        t, x, v = B[:, 0], B[:, 1:n + 1], B[:, n + 1:]
        v0 = np.sqrt(F.m ** 2 + np.sum(v * v, axis=1))
        out[s:s + chunk] = bank.evaluate(jet.matrix(bank.betas), t, x, v, v0)
    return out


# ----------------------------------------------------------------------------
# perturbed characteristics


@dataclass
class CharacteristicRecord:
    """Endpoints, footpoints, factors and integrator statistics (batched)."""

    end_t: np.ndarray
    end_x: np.ndarray
    end_v: np.ndarray
    foot_t: np.ndarray
    foot_x: np.ndarray
    foot_v: np.ndarray
    factor: np.ndarray
    steps: np.ndarray
    error_estimate: np.ndarray
    checkpoints: list = field(default_factory=list)

    def surface_residual(self, surface):
        if surface == "t0":
            return np.abs(self.foot_t)
        return np.abs(self.foot_t ** 2 - np.sum(self.foot_x ** 2, axis=1) - 1.0)


def _datum_of(F):
    return F.datum if isinstance(F, DistributionField) else F


def evolve_vn_massless(wave: WaveField, F, t, x, v, rtol=1e-10, atol=1e-10):
    """Integrate the massless T_phi characteristics backward to t = 0.

    dx/dt = v/|v|, dv/dt = -(T_0(phi)/|v|) v.  Returns the values
    d(x0, v0) exp((n+1)(phi(t, x) - phi(0, x0))) and a CharacteristicRecord.
    """
    datum = _datum_of(F)
    n = datum.n
    if isinstance(F, DistributionField) and (F.m != 0 or F.surface != "t0"):
        raise UsageError("massless Vlasov-Nordstrom evolution needs m = 0 and data on t = 0")
    Z = _stack(t, x, v, n)
    t, x, v = Z[:, 0], Z[:, 1:n + 1], Z[:, n + 1:]
    if np.any(np.linalg.norm(v, axis=1) < V_FLOOR):
        raise SingularCharacteristicError("massless characteristic through |v| = 0")

    def rhs(s, y, idx):
        xs, vs = y[:, :n], y[:, n:]
        speed = np.linalg.norm(vs, axis=1)
        if np.any(speed < V_FLOOR):
            raise SingularCharacteristicError("|v| fell below the floor along a characteristic")
        vhat = vs / speed[:, None]
        g = wave.gradient(s, xs) if not wave.is_zero else np.zeros((len(s), n + 1))
        rate = g[:, 0] + np.sum(vhat * g[:, 1:], axis=1)
        return np.concatenate([vhat, -rate[:, None] * vs], axis=1)

    y0 = np.concatenate([x, v], axis=1)
    y1, stats = integrate_batch(rhs, y0, t, np.zeros_like(t), rtol=rtol, atol=atol)
    x0, v0 = y1[:, :n], y1[:, n:]
    if wave.is_zero:
        delta = np.zeros_like(t)
    else:
        delta = wave(t, x) - wave(np.zeros_like(t), x0)
    factor = np.exp((n + 1) * delta)
    vals = datum(x0, v0) * factor
    rec = CharacteristicRecord(t, x, v, np.zeros_like(t), x0, v0, factor,
                               stats.steps, stats.error_estimate)
    return vals, rec


def evolve_vn_massive_prescribed(wave: WaveField, F, t, x, v, m=None, rtol=1e-10, atol=1e-10,
                                 checkpoints=None, x_cap=1e8):
    """Integrate the massive T_phi characteristics backward to H_1.

    The hyperboloidal time rho = sqrt(t^2 - |x|^2) is the independent
    variable (it increases strictly along future timelike curves), so the
    footpoint lies on H_1 by construction.  With lambda the affine
    parameter, d rho/d lambda = (t v0 - x.v)/rho and

        dx/d rho = v rho / (t v0 - x.v),
        dv/d rho = -(T_m(phi) v + m^2 grad phi) rho / (t v0 - x.v).

    Returns d(foot) exp((n+1)(phi(end) - phi(foot))) and the record; the
    optional ``checkpoints`` (rho values) store intermediate (t, x, v).
    """
    datum = _datum_of(F)
    n = datum.n
    if m is None:
        m = F.m if isinstance(F, DistributionField) else 1.0
    if not m > 0:
        raise UsageError("massive evolution needs m > 0")
    Z = _stack(t, x, v, n)
    t, x, v = Z[:, 0], Z[:, 1:n + 1], Z[:, n + 1:]
    rho2 = t * t - np.sum(x * x, axis=1)
    if np.any(rho2 < 1.0 - H1_SLACK * (1.0 + t * t)) or np.any(t <= 0):
        raise DomainError("endpoint not in the future of H1")
    rho_end = np.sqrt(np.maximum(rho2, 1.0))
    m2 = m * m

    def rhs(rho, y, idx):
        xs, vs = y[:, :n], y[:, n:]
        if np.any(~np.isfinite(y)) or np.any(np.abs(xs) > x_cap):
            raise DomainError("characteristic left the computational domain before reaching H1")
        ts = np.sqrt(rho * rho + np.sum(xs * xs, axis=1))
        v0 = np.sqrt(m2 + np.sum(vs * vs, axis=1))
        lapse = rho / (ts * v0 - np.sum(xs * vs, axis=1))
        if wave.is_zero:
            dv = np.zeros_like(vs)
        else:
            g = wave.gradient(ts, xs)
            tphi = v0 * g[:, 0] + np.sum(vs * g[:, 1:], axis=1)
            dv = -(tphi[:, None] * vs + m2 * g[:, 1:]) * lapse[:, None]
        return np.concatenate([vs * lapse[:, None], dv], axis=1)

    y = np.concatenate([x, v], axis=1)
    levels = sorted({float(c) for c in (checkpoints or [])}, reverse=True)
    saved = []
    steps = np.zeros(len(t), dtype=int)
    err = np.zeros(len(t))
    s_cur = rho_end.copy()
    for level in levels + [1.0]:
        target = np.minimum(s_cur, level)
        y, stats = integrate_batch(rhs, y, s_cur, target, rtol=rtol, atol=atol)
        steps += stats.steps
        err = np.maximum(err, stats.error_estimate)
        s_cur = target
        if level != 1.0:
            xs = y[:, :n]
            saved.append((target.copy(), np.sqrt(target ** 2 + np.sum(xs * xs, axis=1)),
                          xs.copy(), y[:, n:].copy()))
    xf, vf = y[:, :n], y[:, n:]
    tf = np.sqrt(1.0 + np.sum(xf * xf, axis=1))
    if wave.is_zero:
        delta = np.zeros_like(t)
    else:
        delta = wave(t, x) - wave(tf, xf)
    factor = np.exp((n + 1) * delta)
    vals = datum(xf, vf) * factor
    rec = CharacteristicRecord(t, x, v, tf, xf, vf, factor, steps, err, saved)
    return vals, rec


# ----------------------------------------------------------------------------
# trace on H_1


def h1_trace(F: DistributionField, samples=1000, seed=0):
    """Trace on H_1 of the free massive solution of compactly supported data.

    The data are first shifted in time to t = T = sqrt(R^2 + 1).  By finite
    speed of propagation the shifted solution vanishes outside the cone
    C(R) = {|x| <= R + |t - T|}, whose section with H_1 is the ball
    |x| <= R.  The trace is certified to vanish at ``samples`` points of H_1
    with |x| > R, after the data support itself has been certified.
    Returns ``(DistributionField on H1, certificate dict)``.
    """
    if F.law.kind != "free" or not F.m > 0 or F.surface != "t0":
        raise UsageError("h1_trace needs a free massive law with data on t = 0")
    datum = F.datum
    n, m = F.n, F.m
    if datum.is_zero:
        trace = Datum("trace(zero)", n, (), "zero", 0.0, 0.0, fn=datum.fn)
        return DistributionField(trace, Law.free(m), "H1"), dict(R=0.0, T=1.0, samples=0, max_abs=0.0)
    if datum.decay != "compact":
        raise UsageError("h1_trace needs compactly supported data")
    datum.certify_support(samples, seed)
    R = datum.x_radius
    T = math.sqrt(R * R + 1.0)
    d = datum.fn

    def fn(x, v):
        w = v / jnp.sqrt(m * m + jnp.sum(v * v))
        tau = jnp.sqrt(1.0 + jnp.sum(x * x)) - T
        return d(x - tau * w, v)

    trace = Datum(f"trace({datum.name})", n, datum.params + (("shift", T),), "compact",
                  x_radius=R, v_radius=datum.v_radius, x_scale=datum.x_scale,
                  v_scale=datum.v_scale, v_power=datum.v_power, isotropic=datum.isotropic,
                  vanishes_near_v0=datum.vanishes_near_v0, fn=fn)
    rng = np.random.default_rng(seed + 1)
    r = R * (1.0 + np.geomspace(1e-9, 1e3, samples) * rng.uniform(0.5, 1.0, samples))
    xs = _random_directions(rng, samples, n) * r[:, None]
    vs = _random_directions(rng, samples, n) * (datum.v_radius * rng.uniform(0, 1, samples))[:, None]
    vals = trace(xs, vs)
    bad = np.nonzero(vals != 0)[0]
    if bad.size:
        k = bad[0]
        raise DomainError(f"trace nonzero outside the cone section at x={xs[k]}, v={vs[k]}")
    cert = dict(R=R, T=T, samples=int(samples), max_abs=float(np.max(np.abs(vals))))
    return DistributionField(trace, Law.free(m), "H1"), cert
