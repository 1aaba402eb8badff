"""Minkowski geometry: mass shells, the two foliations and their quadratures.

Signature is (-, +, ..., +).  Spatial dimension ``n`` is a runtime
parameter with ``1 <= n <= 4``.

Quadrature on a leaf is a tensor product of a radial Gauss-Legendre rule
(possibly composite and on a mapped variable) with a product rule on the
unit sphere written in hyperspherical coordinates: a polar angle measured
from a chosen axis times a rule on the fibre sphere S^{n-2}.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gamma

from .errors import DomainError, UsageError

__all__ = [
    "PhasePoint",
    "QuadratureSpec",
    "FoliationLeaf",
    "mass_shell_v0",
    "minkowski_inner",
    "hyperboloid_rho",
    "hyperboloid_normal",
    "pseudo_cartesian",
    "from_pseudo_cartesian",
    "sphere_area",
    "gauss_panels",
    "radial_rule",
    "sphere_rule",
    "axis_frame",
    "build_leaf",
]

MAX_DIM = 4


def _check_dim(n):
    if not (1 <= int(n) <= MAX_DIM):
        raise UsageError(f"spatial dimension must be in 1..{MAX_DIM}, got {n}")
    return int(n)


def mass_shell_v0(m, v):
    """Energy ``v0 = sqrt(m^2 + |v|^2)``; ``v`` may be a batch (last axis).

    >>> mass_shell_v0(0, (3.0, 4.0))
    5.0
    """
    v = np.asarray(v, dtype=float)
    if m < 0:
        raise UsageError("mass must be nonnegative")
    s = np.sum(v * v, axis=-1)
    if m == 0 and np.any(s == 0.0):
        raise DomainError("massless shell excludes v = 0")
    out = np.sqrt(m * m + s)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PhasePoint:
    """A point (t, x, v) on the mass shell of mass ``m``."""

    t: float
    x: tuple
    v: tuple
    m: float = 0.0

    def __post_init__(self):
        x = tuple(float(c) for c in np.atleast_1d(self.x))
        v = tuple(float(c) for c in np.atleast_1d(self.v))
        if len(x) != len(v):
            raise UsageError("x and v must have the same length")
        _check_dim(len(x))
        if self.m < 0:
            raise UsageError("mass must be nonnegative")
        if self.m == 0 and not any(v):
            raise DomainError("massless phase point with v = 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "m", float(self.m))

    @property
    def n(self):
        return len(self.x)

    @property
    def v0(self):
        return mass_shell_v0(self.m, self.v)

    def as_arrays(self):
        return float(self.t), np.array(self.x), np.array(self.v)


def minkowski_inner(a, b):
    """eta(a, b) for 4-vectors stored as (a^0, a^1, ..., a^n)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def hyperboloid_rho(t, x):
    """Hyperbolic time ``rho = sqrt(t^2 - |x|^2)`` (batched over leading axes)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(t < 0) or np.any(t * t < r2):
        raise DomainError("point is outside the future of the light cone")
    out = np.sqrt((t - np.sqrt(r2)) * (t + np.sqrt(r2)))
    return float(out) if out.ndim == 0 else out


def hyperboloid_normal(t, x):
    """Future unit normal (t, x)/rho of the hyperboloid through (t, x)."""
    rho = np.asarray(hyperboloid_rho(t, x))
    if np.any(rho == 0):
        raise DomainError("normal undefined on the light cone")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.concatenate([(t / rho)[..., None], x / rho[..., None]], axis=-1)


def pseudo_cartesian(t, x):
    """Map (t, x) to (y0, y) = (rho, x)."""
    return hyperboloid_rho(t, x), np.array(x, dtype=float)


def from_pseudo_cartesian(y0, y):
    """Inverse of :func:`pseudo_cartesian`: returns (t, x)."""
    y = np.asarray(y, dtype=float)
    if np.any(np.asarray(y0) <= 0):
        raise DomainError("y0 = rho must be positive")
    t = np.sqrt(np.asarray(y0, dtype=float) ** 2 + np.sum(y * y, axis=-1))
    return (float(t) if t.ndim == 0 else t), y.copy()


def sphere_area(k):
    """Area of the unit sphere S^k embedded in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


# --------------------------------------------------------------------------
# one-dimensional rules


@lru_cache(maxsize=None)
def _leggauss(k):
    x, w = np.polynomial.legendre.leggauss(k)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_panels(edges, k):
    """Composite Gauss-Legendre rule with ``k`` nodes on each panel."""
    edges = np.asarray(edges, dtype=float)
    if k < 1 or edges.size < 2:
        raise UsageError("need at least one panel and one node")
    gx, gw = _leggauss(int(k))
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * gx[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * gw[None, :]
    keep = (b - a)[:, 0] > 0
    return nodes[keep].ravel(), weights[keep].ravel()


def radial_rule(r_min, r_max, k, panels=1, radial_map="linear", scale=1.0,
                decay=None, breaks=None):
    """Radial nodes and weights (including dr, excluding r^{n-1}).

    radial_map:
      ``linear``     composite Gauss on [r_min, r_max];
      ``sinh``       uniform in eta with r = scale*sinh(eta), suited to
                     hyperboloids where scale = rho;
      ``algebraic``  r_max = inf allowed; the variable s = (1+r-r_min)^(-decay)
                     turns an integrand r^{n-1} g ~ r^{-1-decay} into a
                     bounded one.
    ``breaks`` are extra panel edges given in r.
    """
    if k < 2:
        raise UsageError("node counts must be >= 2")
    if radial_map == "linear":
        if not np.isfinite(r_max):
            raise UsageError("linear radial map needs finite extent")
        edges = np.linspace(r_min, r_max, int(panels) + 1)
        if breaks is not None:
            b = [c for c in breaks if r_min < c < r_max]
            edges = np.unique(np.concatenate([edges, b]))
        return gauss_panels(edges, k)
    if radial_map == "sinh":
        e0, e1 = np.arcsinh(r_min / scale), np.arcsinh(r_max / scale)
        edges = np.linspace(e0, e1, int(panels) + 1)
        if breaks is not None:
            b = [np.arcsinh(c / scale) for c in breaks if r_min < c < r_max]
            edges = np.unique(np.concatenate([edges, b]))
        eta, w = gauss_panels(edges, k)
        return scale * np.sinh(eta), w * scale * np.cosh(eta)
    if radial_map == "algebraic":
        if decay is None or decay <= 0:
            raise UsageError("algebraic radial map needs a positive decay exponent")
        rb = np.asarray(breaks if breaks is not None else
                        np.geomspace(1.0, 1e12, int(panels)), dtype=float)
        rb = rb[(rb > 0) & (rb < r_max - r_min)]
        s_hi = 1.0
        s_lo = 0.0 if not np.isfinite(r_max) else (1.0 + r_max - r_min) ** (-decay)
        s_edges = np.concatenate([[s_lo], np.sort((1.0 + rb) ** (-decay)), [s_hi]])
        s, w = gauss_panels(np.unique(s_edges), k)
        r = r_min + s ** (-1.0 / decay) - 1.0
        return r, w * s ** (-1.0 / decay - 1.0) / decay
    raise UsageError(f"unknown radial map {radial_map!r}")


# --------------------------------------------------------------------------
# sphere rules


def _polar_rule(n, k, theta_max, panels):
    """Polar angle nodes on [0, theta_max] with the weight sin^{n-2}."""
    edges = np.linspace(0.0, theta_max, int(panels) + 1)
    th, w = gauss_panels(edges, k)
    return th, w * np.sin(th) ** (n - 2)


def _fibre_rule(d, k):
    """Rule on S^{d-1} (unit vectors of R^d) with ~k nodes per angle."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        phi = 2.0 * np.pi * (np.arange(k) + 0.5) / k
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(k, 2.0 * np.pi / k)
    th, wt = _polar_rule(d, max(2, k // 2), np.pi, 1)
    sub, ws = _fibre_rule(d - 1, k)
    dirs = np.concatenate([
        np.repeat(np.cos(th), len(ws))[:, None],
        (np.sin(th)[:, None, None] * sub[None, :, :]).reshape(-1, d - 1),
    ], axis=1)
    return dirs, np.outer(wt, ws).ravel()


def sphere_rule(n, polar, fibre=None, theta_max=np.pi, panels=1, reduced=False):
    """Product rule on the cap {theta <= theta_max} of S^{n-1} around e1.

    Returns ``(dirs, weights)`` with ``dirs`` of shape (k, n).  With
    ``reduced=True`` the fibre sphere is collapsed to the single direction
    e2 and its area absorbed in the weights: exact for integrands that are
    invariant under rotations fixing e1.
    """
    n = _check_dim(n)
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if polar < 2:
        raise UsageError("node counts must be >= 2")
    th, wt = _polar_rule(n, polar, theta_max, panels)
    if reduced:
        sub = np.zeros((1, n - 1))
        sub[0, 0] = 1.0
        ws = np.array([sphere_area(n - 2)])
    else:
        sub, ws = _fibre_rule(n - 1, fibre if fibre is not None else 2 * polar)
    dirs = np.concatenate([
        np.repeat(np.cos(th), len(ws))[:, None],
        (np.sin(th)[:, None, None] * sub[None, :, :]).reshape(-1, n - 1),
    ], axis=1)
    return dirs, np.outer(wt, ws).ravel()


def axis_frame(axis):
    """Orthogonal matrix (Householder reflection) mapping e1 to ``axis``.

    Batched: ``axis`` of shape (..., n) gives (..., n, n).  Zero axes map to
    the identity.
    """
    a = np.asarray(axis, dtype=float)
    n = a.shape[-1]
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    a = np.where(norm > 0, a / safe, np.eye(n)[0])
    u = -a.copy()
    u[..., 0] += 1.0
    uu = np.sum(u * u, axis=-1)[..., None, None]
    eye = np.broadcast_to(np.eye(n), a.shape[:-1] + (n, n))
    refl = eye - 2.0 * u[..., :, None] * u[..., None, :] / np.where(uu > 1e-30, uu, 1.0)
    return np.where(uu > 1e-30, refl, eye)


# --------------------------------------------------------------------------
# leaves


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and truncation for tensor-product Gauss rules.

    ``x_*`` counts apply to leaves, ``v_*`` counts to velocity averages.
    Radial counts are per panel.
    """

    v_radius: float = 6.0
    x_radial: int = 32
    x_panels: int = 1
    x_polar: int = 12
    x_fibre: int = 16
    v_radial: int = 24
    v_panels: int = 1
    v_polar: int = 16
    v_fibre: int = 16
    tol: float = 1e-8
    scheme: str = "gauss-legendre"

    def __post_init__(self):
        counts = (self.x_radial, self.x_polar, self.x_fibre,
                  self.v_radial, self.v_polar, self.v_fibre)
        if min(counts) < 2 or self.x_panels < 1 or self.v_panels < 1:
            raise UsageError("node counts must be >= 2")
        if not self.v_radius > 0:
            raise UsageError("truncation radius must be positive")
        if not 0 < self.tol < 1:
            raise UsageError("tolerance must lie in (0, 1)")

    def refined(self, factor=2):
        """Spec with all node counts multiplied by ``factor``."""
        d = asdict(self)
        for key in ("x_radial", "x_polar", "x_fibre", "v_radial", "v_polar", "v_fibre"):
            d[key] = int(round(d[key] * factor))
        return QuadratureSpec(**d)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class FoliationLeaf:
    """A slice Sigma_t (``fixed_time``) or H_rho (``hyperboloid``) with nodes.

    ``weights`` are the positive tensor-product quadrature weights in
    (r, omega); ``measure`` is the induced density at each node, so that
    ``integrate(g) = sum(weights * measure * g)``.  For Sigma_t the measure
    is r^{n-1}; for H_rho it is (rho/t) r^{n-1}.
    """

    kind: str
    value: float
    n: int
    t: np.ndarray
    x: np.ndarray
    weights: np.ndarray
    measure: np.ndarray
    extent: float
    description: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.weights.size

    @property
    def r(self):
        return np.linalg.norm(self.x, axis=-1)

    def integrate(self, values):
        values = np.asarray(values, dtype=float)
        return float(np.sum(self.weights * self.measure * values))

    def to_json(self):
        return json.dumps(self.description, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        spec = QuadratureSpec.from_dict(d.pop("spec"))
        return build_leaf(spec=spec, **d)


def build_leaf(kind, value, extent, spec=None, n=3, reduced=False,
               radial_map=None, r_min=0.0, breaks=None, decay=None):
    """Quadrature-equipped leaf Sigma_t (kind ``fixed_time``, value t) or
    H_rho (kind ``hyperboloid``, value rho) covering r in [r_min, extent].

    With ``reduced=True`` the sphere is collapsed to the single direction e1
    carrying the full sphere area: exact for radial integrands.
    """
    n = _check_dim(n)
    spec = spec or QuadratureSpec()
    if kind not in ("fixed_time", "hyperboloid"):
        raise UsageError(f"unknown leaf kind {kind!r}")
    if not extent > 0:
        raise UsageError("radial extent must be positive")
    if kind == "hyperboloid" and value < 1:
        raise UsageError("hyperboloid leaves need rho >= 1")
    if radial_map is None:
        radial_map = "sinh" if kind == "hyperboloid" else "linear"
    scale = value if kind == "hyperboloid" else 1.0
    r, wr = radial_rule(r_min, extent, spec.x_radial, spec.x_panels, radial_map,
                        scale=scale, decay=decay, breaks=breaks)
    if reduced:
        dirs = np.eye(n)[:1]
        wd = np.array([sphere_area(n - 1)])
    else:
        dirs, wd = sphere_rule(n, spec.x_polar, spec.x_fibre)
    if r.size == 0 or wd.size == 0:
        raise UsageError("leaf has zero nodes")
    x = (r[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    w = np.outer(wr, wd).ravel()
    rr = np.repeat(r, len(wd))
    if kind == "fixed_time":
        t = np.full(rr.shape, float(value))
        measure = rr ** (n - 1)
    else:
        t = np.sqrt(value * value + rr * rr)
        measure = (value / t) * rr ** (n - 1)
    desc = dict(kind=kind, value=float(value), extent=float(extent), n=n,
                reduced=bool(reduced), radial_map=radial_map, r_min=float(r_min),
                breaks=None if breaks is None else [float(b) for b in breaks],
                decay=decay, spec=asdict(spec))
    return FoliationLeaf(kind, float(value), n, t, x, w, measure, float(extent), desc)
