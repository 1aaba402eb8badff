"""Sparse rational polynomials on the mass shell.

A :class:`Poly` is a finite sum of monomials ``c * t^a x^b v^c (v0)^e`` with
rational ``c``, nonnegative exponents on ``t, x, v`` and an integer
(possibly negative) exponent ``e`` on ``v0``.  After every product the
relation ``v0^2 = m^2 + |v|^2`` is used to lower ``e`` below 2, so that
distinct representations of the same function on the shell collapse.  The
zero test multiplies through by a power of ``v0`` and reduces, leaving a
unique form ``A(v) + B(v) v0``.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Dict, Tuple

import numpy as np

from .errors import UsageError

Key = Tuple[int, ...]


def _frac(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, float):
        return Fraction(c).limit_denominator(10**12)
    return Fraction(c)


class Poly:
    """Polynomial in (t, x^1..x^n, v^1..v^n) and Laurent in v0.

    Keys have length 2n+2: exponents of t, x (n), v (n), v0.
    """

    __slots__ = ("n", "m2", "terms")

    def __init__(self, n, m2, terms=None, reduce=True):
        self.n = int(n)
        self.m2 = _frac(m2)
        self.terms: Dict[Key, Fraction] = {}
        if terms:
            for k, c in terms.items():
                c = _frac(c)
                if c:
                    self._add_term(tuple(k), c)
            if reduce:
                self._reduce()

    # -- construction -----------------------------------------------------
    @classmethod
    def const(cls, n, m2, c):
        return cls(n, m2, {(0,) * (2 * n + 2): c})

    @classmethod
    def var(cls, n, m2, name):
        """Variable by name: ``t``, ``x1``.., ``v1``.., ``v0``."""
        key = [0] * (2 * n + 2)
        key[variable_index(n, name)] = 1
        return cls(n, m2, {tuple(key): 1})

    def _like(self, terms, reduce=True):
        return Poly(self.n, self.m2, terms, reduce=reduce)

    def _add_term(self, k, c):
        s = self.terms.get(k, 0) + c
        if s:
            self.terms[k] = s
        else:
            self.terms.pop(k, None)

    def _reduce(self):
        n = self.n
        while True:
            high = [k for k in self.terms if k[-1] >= 2]
            if not high:
                return
            for k in high:
                c = self.terms.pop(k)
                base = list(k)
                base[-1] -= 2
                if self.m2:
                    self._add_term(tuple(base), c * self.m2)
                for i in range(n):
                    kk = list(base)
                    kk[n + 1 + i] += 2
                    self._add_term(tuple(kk), c)

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Poly):
            if other.n != self.n or other.m2 != self.m2:
                raise UsageError("polynomials live on different mass shells")
            return other
        return Poly.const(self.n, self.m2, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = self._like(self.terms, reduce=False)
        for k, c in other.terms.items():
            out._add_term(k, c)
        return out

    __radd__ = __add__

    def __neg__(self):
        return self._like({k: -c for k, c in self.terms.items()}, reduce=False)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = _frac(other)
            return self._like({k: v * c for k, v in self.terms.items()}, reduce=False)
        other = self._coerce(other)
        out = self._like({}, reduce=False)
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                out._add_term(tuple(a + b for a, b in zip(k1, k2)), c1 * c2)
        out._reduce()
        return out

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Poly.const(self.n, self.m2, 1)
        for _ in range(int(k)):
            out = out * self
        return out

    def v0_power(self, e):
        """Multiply by v0^e (e may be negative)."""
        return self._like({k[:-1] + (k[-1] + e,): c for k, c in self.terms.items()})

    # -- calculus ---------------------------------------------------------
    def diff(self, j):
        """Partial derivative along coordinate ``j`` of (t, x, v) on the shell.

        ``j`` runs over 0..2n; v-derivatives include the chain rule through
        v0 = sqrt(m^2 + |v|^2): d v0 / d v^i = v^i / v0.
        """
        n = self.n
        out = self._like({}, reduce=False)
        for k, c in self.terms.items():
            if k[j]:
                kk = list(k)
                kk[j] -= 1
                out._add_term(tuple(kk), c * k[j])
            if j > n and k[-1]:
                kk = list(k)
                kk[j] += 1
                kk[-1] -= 2
                out._add_term(tuple(kk), c * k[-1])
        out._reduce()
        return out

    # -- inspection -------------------------------------------------------
    def min_v0_power(self):
        return min((k[-1] for k in self.terms), default=0)

    def cleared(self, shift=None):
        """Multiply by v0^K with K clearing negative powers; reduced form."""
        K = -self.min_v0_power() if shift is None else shift
        return self.v0_power(max(K, 0))

    def is_zero(self):
        return not self.cleared().terms

    def equals(self, other):
        return (self - self._coerce(other)).is_zero()

    def constant_value(self):
        """The rational constant this polynomial equals on the shell, or None."""
        if any(not self.diff(j).is_zero() for j in range(2 * self.n + 1)):
            return None
        v = np.full(self.n, 0.7)
        c = Fraction(float(self(0.3, v, v))).limit_denominator(10**9)
        return c if (self - c).is_zero() else None

    def degree(self, j):
        return max((k[j] for k in self.terms), default=0)

    def __bool__(self):
        return not self.is_zero()

    def __eq__(self, other):
        try:
            return self.equals(other)
        except UsageError:
            return False

    __hash__ = None

    # -- evaluation -------------------------------------------------------
    def compile(self):
        """(exponent matrix, float coefficients) for vectorized evaluation."""
        if not self.terms:
            return np.zeros((0, 2 * self.n + 2), dtype=int), np.zeros(0)
        keys = sorted(self.terms)
        return (np.array(keys, dtype=int),
                np.array([float(self.terms[k]) for k in keys]))

    def __call__(self, t, x, v, v0=None):
        """Evaluate at batched points; x, v have trailing axis n."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if v0 is None:
            v0 = np.sqrt(float(self.m2) + np.sum(v * v, axis=-1))
        cols = [t] + [x[..., i] for i in range(self.n)] + \
               [v[..., i] for i in range(self.n)] + [np.asarray(v0, dtype=float)]
        shape = np.broadcast_shapes(*(c.shape for c in cols))
        out = np.zeros(shape)
        for k, c in self.terms.items():
            term = np.full(shape, float(c))
            for col, e in zip(cols, k):
                if e:
                    term = term * col ** e
            out = out + term
        return out

    def eval_exact(self, t, x, v, v0):
        """Exact evaluation with Fraction inputs."""
        vals = [_frac(t)] + [_frac(a) for a in x] + [_frac(a) for a in v] + [_frac(v0)]
        total = Fraction(0)
        for k, c in self.terms.items():
            term = c
            for val, e in zip(vals, k):
                if e:
                    term *= val ** e
            total += term
        return total

    # -- printing ---------------------------------------------------------
    def __repr__(self):
        return f"Poly({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        names = variable_names(self.n)
        parts = []
        for k in sorted(self.terms, reverse=True):
            c = self.terms[k]
            mono = []
            for name, e in zip(names, k):
                if e == 1:
                    mono.append(name)
                elif e:
                    mono.append(f"{name}^{e}")
            body = "*".join(mono)
            if not body:
                parts.append(str(c))
            elif c == 1:
                parts.append(body)
            elif c == -1:
                parts.append("-" + body)
            else:
                parts.append(f"{c}*{body}")
        return " + ".join(parts).replace("+ -", "- ")


def variable_names(n):
    return ["t"] + [f"x{i}" for i in range(1, n + 1)] + \
           [f"v{i}" for i in range(1, n + 1)] + ["v0"]


def variable_index(n, name):
    names = variable_names(n)
    if name not in names:
        raise UsageError(f"unknown variable {name!r}")
    return names.index(name)


def coordinate_names(n):
    """Names of the 2n+1 phase-space coordinates (t, x, v)."""
    return variable_names(n)[:-1]
