"""Vectorized Dormand-Prince 5(4) integrator with per-trajectory step control.

All trajectories of a batch advance together, each with its own step size,
so that one call handles thousands of characteristics with numpy-level
vectorization.  Error control uses the max-norm over components of
``err / (atol + rtol * max(|y|, |y_new|))`` per trajectory and a PI step
controller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ToleranceError

__all__ = ["IntegrationStats", "integrate_batch"]

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class IntegrationStats:
    steps: np.ndarray
    rejected: np.ndarray
    error_estimate: np.ndarray

    @property
    def max_steps(self):
        return int(self.steps.max()) if self.steps.size else 0


def integrate_batch(rhs, y0, s0, s1, rtol=1e-10, atol=1e-10, h0=None,
                    max_steps=100000, callback=None):
    """Integrate ``dy/ds = rhs(s, y)`` for a batch from s0 to s1 (per row).

    ``rhs(s, y, idx)`` receives the active rows ``idx`` of the batch and
    must return derivatives of the same shape as ``y``.  Returns the final
    states and an :class:`IntegrationStats`.
    """
    y = np.array(y0, dtype=float, copy=True)
    N, d = y.shape
    s = np.broadcast_to(np.asarray(s0, dtype=float), (N,)).copy()
    s_end = np.broadcast_to(np.asarray(s1, dtype=float), (N,)).copy()
    direction = np.sign(s_end - s)
    span = np.abs(s_end - s)
    if h0 is None:
        h = np.where(span > 0, np.minimum(span, 1e-2 * np.maximum(span, 1.0)), 0.0)
    else:
        h = np.minimum(np.broadcast_to(np.asarray(h0, dtype=float), (N,)), span)
    steps = np.zeros(N, dtype=int)
    rejected = np.zeros(N, dtype=int)
    err_est = np.zeros(N)
    err_prev = np.ones(N)
    active = span > 0
    it = 0
    while np.any(active):
        it += 1
        if it > max_steps:
            raise ToleranceError("step budget exhausted", estimate=float(err_est.max()))
        idx = np.nonzero(active)[0]
        ya = y[idx]
        sa = s[idx]
        remaining = np.abs(s_end[idx] - sa)
        ha = np.minimum(h[idx], remaining)
        hs = ha * direction[idx]
        K = np.empty((7, idx.size, d))
        K[0] = rhs(sa, ya, idx)
        for stage in range(1, 7):
            acc = ya.copy()
            for j, a in enumerate(_A[stage]):
                if a:
                    acc += (hs * a)[:, None] * K[j]
            K[stage] = rhs(sa + _C[stage] * hs, acc, idx)
        y5 = ya + hs[:, None] * np.tensordot(_B5, K, axes=(0, 0))
        err = hs[:, None] * np.tensordot(_E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y5))
        en = np.max(np.abs(err) / scale, axis=1)
        bad = ~np.isfinite(en)
        en = np.where(bad, 1e10, en)
        accept = en <= 1.0
        acc_idx = idx[accept]
        y[acc_idx] = y5[accept]
        s[acc_idx] = sa[accept] + hs[accept]
        steps[acc_idx] += 1
        rejected[idx[~accept]] += 1
        err_est[acc_idx] = np.maximum(err_est[acc_idx], en[accept] * rtol)
        safe = np.maximum(en, 1e-10)
        fac = 0.9 * safe ** (-0.7 / 5) * np.maximum(err_prev[idx], 1e-10) ** (0.4 / 5)
        fac = np.where(accept, np.clip(fac, 0.2, 5.0), np.clip(0.9 * safe ** (-0.2), 0.1, 0.9))
        h[idx] = ha * fac
        err_prev[acc_idx] = np.maximum(en[accept], 1e-4)
        done = np.abs(s_end[idx] - s[idx]) <= 1e-14 * np.maximum(1.0, np.abs(s_end[idx]))
        s[idx[done]] = s_end[idx[done]]
        active[idx[done]] = False
        tiny = h[idx] < 1e-14 * np.maximum(1.0, np.abs(s[idx]))
        if np.any(tiny & ~done):
            raise ToleranceError("step size underflow", estimate=float(en.max()))
        if callback is not None:
            callback(s, y, active)
    return y, IntegrationStats(steps, rejected, err_est)
