"""Batched partial derivatives ("jets") of scalar functions.

Two sources: exact derivatives of closed-form expressions through
forward-mode automatic differentiation (jax, float64), and central finite
differences with one level of Richardson extrapolation for functions known
only pointwise.  Points are rows ``z = (t, x^1..x^n, v^1..v^n)`` (or
``(t, x)`` for spacetime functions).
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

import jax
import jax.numpy as jnp

from .errors import UsageError

jax.config.update("jax_enable_x64", True)

__all__ = ["Jet", "jax_jet", "fd_jet", "PhaseFunction", "OperatorBank", "betas_up_to", "batched"]

EPS = np.finfo(float).eps
CHUNK = 8192


def _bucket(N):
    """Padded batch size: powers of two from 64 up, so compiled kernels are reused."""
    return max(64, 1 << max(0, int(N - 1).bit_length()))


def batched(f, *arrays, chunk=CHUNK):
    """Apply a jit-compiled vmapped ``f`` to row-aligned arrays.

    Rows are processed in chunks whose sizes are padded to a small set of
    buckets (repeating the last row), so repeated calls with varying batch
    sizes do not trigger recompilation.  Returns a numpy array (or tuple).
    """
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    N = arrays[0].shape[0]
    if N == 0:
        probe = f(*[jnp.asarray(np.zeros((1,) + a.shape[1:])) for a in arrays])
        return np.zeros((0,) + np.shape(probe)[1:])
    outs = []
    for s in range(0, N, chunk):
        blocks = [a[s:s + chunk] for a in arrays]
        k = blocks[0].shape[0]
        size = min(_bucket(k), chunk) if k < chunk else chunk
        if size > k:
            blocks = [np.concatenate([b, np.repeat(b[-1:], size - k, axis=0)]) for b in blocks]
        outs.append(np.asarray(f(*[jnp.asarray(b) for b in blocks]))[:k])
    return np.concatenate(outs, axis=0)


def betas_up_to(d, order):
    """All count vectors of length d with total <= order, graded."""
    out = []
    for k in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(d), k):
            b = [0] * d
            for j in combo:
                b[j] += 1
            out.append(tuple(b))
    return out


def _beta_to_index(beta):
    idx = []
    for j, c in enumerate(beta):
        idx += [j] * c
    return tuple(idx)


class Jet:
    """Partial derivatives at a batch of points, indexed by count vectors."""

    def __init__(self, d, order, values):
        self.d = d
        self.order = order
        self._values = values  # dict beta -> (N,) array

    def __getitem__(self, beta):
        beta = tuple(beta)
        if sum(beta) > self.order:
            raise UsageError(f"derivative of order {sum(beta)} not available (max {self.order})")
        return self._values[beta]

    def matrix(self, betas):
        return np.stack([self[b] for b in betas], axis=-1)

    @property
    def value(self):
        return self._values[(0,) * self.d]


@lru_cache(maxsize=64)
def _compiled_derivs(fn, order):
    fs = [fn]
    for _ in range(order):
        fs.append(jax.jacfwd(fs[-1]))
    return [jax.jit(jax.vmap(g)) for g in fs]


def jax_jet(fn, Z, order, chunk=8192):
    """Exact jet of a jax-traceable scalar function ``fn(z)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    N, d = Z.shape
    derivs = _compiled_derivs(fn, int(order))
    betas = betas_up_to(d, order)
    values = {b: np.empty(N) for b in betas}
    for s in range(0, N, chunk):
        block = Z[s:s + chunk]
        tens = [batched(g, block, chunk=chunk) for g in derivs]
        for b in betas:
            k = sum(b)
            values[b][s:s + chunk] = tens[k][(slice(None),) + _beta_to_index(b)]
    return Jet(d, order, values)


_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


def _fd_single(fn, Z, beta, h):
    axes = [(j, c) for j, c in enumerate(beta) if c]
    if not axes:
        return fn(Z)
    total = np.zeros(Z.shape[0])
    grids = [list(zip(*_STENCILS[c])) for _, c in axes]
    for combo in itertools.product(*grids):
        shift = np.zeros_like(Z)
        weight = 1.0
        for (j, c), (off, w) in zip(axes, combo):
            shift[:, j] = off * h[:, j]
            weight *= w
        total = total + weight * fn(Z + shift)
    denom = np.ones(Z.shape[0])
    for j, c in axes:
        denom = denom * h[:, j] ** c
    return total / denom


def fd_jet(fn, Z, order, step=None, richardson=True):
    """Finite-difference jet of a vectorized numpy function ``fn(Z)``.

    Step per coordinate: ``step * (1 + |z_j|)`` with the default
    ``step = eps^(1/(k+2))`` for derivative order k (eps^(1/3) at k = 1).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = Z.shape[1]
    if order > 4:
        raise UsageError("finite-difference jets support order <= 4")
    values = {}
    for b in betas_up_to(d, order):
        k = sum(b)
        s = step if step is not None else EPS ** (1.0 / (k + 2))
        h = s * (1.0 + np.abs(Z))
        D1 = _fd_single(fn, Z, b, h)
        if richardson and k:
            D2 = _fd_single(fn, Z, b, 0.5 * h)
            D1 = (4.0 * D2 - D1) / 3.0
        values[b] = D1
    return Jet(d, order, values)


class PhaseFunction:
    """Scalar function on phase space (or spacetime) with a derivative oracle.

    ``fn_jax(z)`` is a jax-traceable scalar function of one point; when it
    is missing, derivatives fall back to finite differences of ``fn_np``.
    """

    def __init__(self, d, fn_jax=None, fn_np=None, max_order=12):
        if fn_jax is None and fn_np is None:
            raise UsageError("need a function")
        self.d = d
        self.fn_jax = fn_jax
        self.max_order = max_order
        if fn_np is None:
            vf = jax.jit(jax.vmap(fn_jax))
            fn_np = lambda Z: batched(vf, Z)
        self.fn_np = fn_np

    @property
    def exact(self):
        return self.fn_jax is not None

    def __call__(self, Z):
        return self.fn_np(np.atleast_2d(np.asarray(Z, dtype=float)))

    def jet(self, Z, order, method=None):
        if order > self.max_order:
            raise UsageError(f"derivative order {order} exceeds oracle order {self.max_order}")
        method = method or ("exact" if self.exact else "fd")
        if method == "exact":
            if not self.exact:
                raise UsageError("no exact derivative oracle available")
            return jax_jet(self.fn_jax, Z, order)
        return fd_jet(self.fn_np, Z, order)


class OperatorBank:
    """Evaluate many normal-ordered operators sharing one jet.

    Coefficients are expanded over a common monomial basis so that each
    operator reduces to a matrix product against the jet matrix.
    """

    def __init__(self, ops):
        self.ops = list(ops)
        monos = sorted({k for op in self.ops for c in op.terms.values() for k in c.terms})
        self.monos = np.array(monos, dtype=int).reshape(len(monos), -1)
        mindex = {k: i for i, k in enumerate(monos)}
        self.betas = sorted({b for op in self.ops for b in op.terms})
        bindex = {b: i for i, b in enumerate(self.betas)}
        self.order = max((sum(b) for b in self.betas), default=0)
        self.mats = []
        for op in self.ops:
            cols = sorted(op.terms)
            C = np.zeros((len(monos), len(cols)))
            for j, b in enumerate(cols):
                for k, c in op.terms[b].terms.items():
                    C[mindex[k], j] = float(c)
            self.mats.append((np.array([bindex[b] for b in cols], dtype=int), C))

    def monomials(self, t, x, v, v0):
        cols = np.concatenate([np.asarray(t, dtype=float)[:, None], x, v, v0[:, None]], axis=1)
        M = np.ones((cols.shape[0], len(self.monos)))
        for j in range(cols.shape[1]):
            e = self.monos[:, j]
            if np.any(e):
                for p in np.unique(e[e != 0]):
                    sel = e == p
                    M[:, sel] *= (cols[:, j] ** p)[:, None]
        return M

    def evaluate(self, jet_matrix, t, x, v, v0):
        """(N, n_ops) values given the jet matrix over ``self.betas``."""
        M = self.monomials(t, x, v, v0)
        out = np.empty((M.shape[0], len(self.ops)))
        for o, (idx, C) in enumerate(self.mats):
            out[:, o] = np.sum((M @ C) * jet_matrix[:, idx], axis=1)
        return out
