"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every line is also collected and repeated in the terminal summary.
Runtime budgets are part of each criterion.
"""
import time

import numpy as np
import pytest

from vlasovlab.kinetic import DistributionField, Law, make_datum
from vlasovlab.verify import (
    DEFAULT_CONFIG,
    CheckResult,
    algebra_checks,
    appendix_b_check,
    averaging_checks,
    conservation_checks,
    improved_derivative_decay,
    interior_decay,
    ks_check_massive,
    ks_check_massless,
    vn_massive_prescribed_checks,
    vn_massless_checks,
    wave_checks,
    weight_checks,
)
from vlasovlab.waves import make_wave

CFG = DEFAULT_CONFIG
LINES = []


def report(k, title, results, seconds, budget):
    timing = CheckResult.compare(f"runtime (s), budget {budget}", seconds, budget, "<")
    results = list(results) + [timing]
    ok = all(r.passed for r in results)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {title} ({seconds:.1f} s)"
    LINES.append(line)
    print(line)
    for r in results:
        print("    " + r.line())
    assert ok, "\n".join(r.line() for r in results if not r.passed)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def massive_gaussian():
    return DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0), "H1")


def massless_powerlaw():
    return DistributionField(make_datum("powerlaw-x-shell-v", 2), Law.free(0.0))


def test_criterion_01_algebra():
    res, dt = timed(lambda: algebra_checks(3))
    report(1, "exact transport commutators and K^0 bracket closure", res, dt, 1.0)


def test_criterion_02_weights():
    res, dt = timed(lambda: weight_checks(3))
    report(2, "k_0 weights exact, kappa_0 drift within 10x integrator tolerance", res, dt, 10.0)


def test_criterion_03_conservation():
    res, dt = timed(lambda: conservation_checks(tol=CFG.conservation_tol))
    report(3, "free-flow norm and chi_m flux conservation", res, dt, 300.0)


def test_criterion_04_massive_decay():
    def run():
        F = massive_gaussian()
        lo, hi = CFG.massive_window
        rep = interior_decay(F, np.geomspace(lo, hi, 7), (lo, hi), predicted=-3)
        ks = ks_check_massive(F)
        return [
            CheckResult.compare("|exponent + 3| / 3", abs(rep.exponent + 3) / 3, CFG.exponent_rel_tol,
                                "<=", exponent=rep.exponent, refinement_delta=rep.refinement_delta),
            CheckResult.compare("KS normalized sup finite", ks.sup, 0.0, ">"),
            CheckResult.compare("KS sup change under sample doubling", ks.refinement_delta,
                                CFG.refinement_tol, "<", sup=ks.sup, refined_sup=ks.refined_sup),
        ]

    res, dt = timed(run)
    report(4, "massive n=3 interior exponent -3 and Klainerman-Sobolev sup", res, dt, 600.0)


def test_criterion_05_massless_decay():
    def run():
        lo, hi = CFG.fit_window
        rep = interior_decay(massless_powerlaw(), np.geomspace(lo, hi, 7), (lo, hi), predicted=-2)
        ks = ks_check_massless(DistributionField(make_datum("shell-in-v", 2), Law.free(0.0)))
        return [
            CheckResult.compare("|exponent + 2| / 2", abs(rep.exponent + 2) / 2, CFG.exponent_rel_tol,
                                "<=", exponent=rep.exponent, refinement_delta=rep.refinement_delta),
            CheckResult.compare("near-cone normalized sup finite", ks.sup, 0.0, ">"),
            CheckResult.compare("near-cone sup change under refinement", ks.refinement_delta,
                                CFG.refinement_tol, "<", sup=ks.sup, refined_sup=ks.refined_sup),
        ]

    res, dt = timed(run)
    report(5, "massless n=2 interior exponent -2 and two-factor sup", res, dt, 600.0)


def test_criterion_06_derivative_gain():
    def run():
        out = []
        for label, F, window in (("d_t, massless n=2", massless_powerlaw(), CFG.fit_window),
                                 ("nu_rho, massive n=3", massive_gaussian(), CFG.massive_window)):
            base, der = improved_derivative_decay(F, np.geomspace(*window, 7), window=window)
            gain = base.exponent - der.exponent
            out.append(CheckResult.compare(f"|gain - 1| for {label}", abs(gain - 1.0),
                                           CFG.derivative_tol, "<=", base=base.exponent,
                                           derivative=der.exponent))
        return out

    res, dt = timed(run)
    report(6, "one extra derivative steepens the exponent by 1", res, dt, 900.0)


def test_criterion_07_waves():
    res, dt = timed(lambda: wave_checks(make_wave("radial3-bump", 3)))
    report(7, "exact radial wave: box, flux, decay, null structure", res, dt, 120.0)


def test_criterion_08_vn_massless():
    wave = make_wave("radial3-bump", 3, center=0.5, width=0.5)
    datum = make_datum("compact-x-shell-v", 3)
    res, dt = timed(lambda: vn_massless_checks(wave, datum, CFG, epsilon=1e-2))
    report(8, "massless Vlasov-Nordstrom boundedness and sqrt(eps) growth", res, dt, 1800.0)


def test_criterion_09_vn_massive():
    wave = make_wave("radial3-bump", 3)
    datum = make_datum("gaussian-xv", 3)
    res, dt = timed(lambda: vn_massive_prescribed_checks(wave, datum, CFG, epsilon=1e-2))
    report(9, "massive prescribed-field invariant and decay exponent", res, dt, 1800.0)


def test_criterion_10_radial_integral_band():
    def run():
        out = []
        for a, b, n in ((3, 2, 2), (3, 1, 2), (4, 2, 3)):
            rep = appendix_b_check(a, b, n)
            out.append(CheckResult.compare(f"ratio band (alpha={a}, beta={b}, n={n}) on [1, 1e3]",
                                           rep.band, CFG.appendix_band, "<=",
                                           late_band=rep.late_band))
        return out

    res, dt = timed(run)
    report(10, "radial integral ratio within a factor-2 band", res, dt, 60.0)


def test_criterion_11_averaging():
    res, dt = timed(lambda: averaging_checks(tol=CFG.commutator_tol))
    report(11, "averaging identities for translations, rotations, boosts, scaling", res, dt, 300.0)


@pytest.fixture(scope="module", autouse=True)
def _collect(request):
    yield
    request.config._acceptance_lines = list(LINES)
