import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasovlab.errors import UsageError
from vlasovlab.kinetic import DistributionField, Law, make_datum
from vlasovlab.verify import (
    DEFAULT_CONFIG,
    CheckResult,
    algebra_checks,
    appendix_b_bound,
    appendix_b_check,
    appendix_b_integral,
    average_series,
    averaging_checks,
    conservation_checks,
    decay_fit,
    identity_checks,
    improved_derivative_decay,
    ks_check_massless,
    weight_checks,
)


@given(
    rate=st.floats(-5.0, 2.0),
    amp=st.floats(1e-3, 1e3),
    k=st.integers(5, 20),
)
@settings(max_examples=40, deadline=None)
def test_decay_fit_recovers_power_law(rate, amp, k):
    t = np.geomspace(1.0, 100.0, k)
    rep = decay_fit(list(zip(t, amp * t ** rate)))
    assert rep.exponent == pytest.approx(rate, abs=1e-10)
    assert rep.sup_normalized == pytest.approx(amp, rel=1e-9)
    assert rep.stderr < 1e-8


def test_decay_fit_window_selects_samples():
    t = np.geomspace(1.0, 1000.0, 31)
    v = np.where(t < 10, t ** -1.0, 10.0 * t ** -2.0)
    rep = decay_fit(list(zip(t, v)), window=(10.0, 1000.0))
    assert rep.exponent == pytest.approx(-2.0, abs=1e-10)
    assert rep.window[0] >= 10.0 and rep.samples == 21


@pytest.mark.parametrize(
    "samples, window",
    [
        ([(1.0, 1.0), (2.0, 0.5)], None),
        ([(t, 1.0 / t) for t in range(1, 10)], (50.0, 100.0)),
        ([(t, -1.0) for t in range(1, 10)], None),
        ([(t, 0.0) for t in range(1, 10)], None),
        ([(t, math.nan) for t in range(1, 10)], None),
        ([(t - 5.0, 1.0) for t in range(1, 10)], None),
    ],
)
def test_decay_fit_usage_errors(samples, window):
    with pytest.raises(UsageError):
        decay_fit(samples, window)


@pytest.mark.parametrize(
    "value, threshold, relation, expected",
    [
        (1.0, 2.0, "<", True),
        (2.0, 2.0, "<", False),
        (2.0, 2.0, "<=", True),
        (3.0, 2.0, ">", True),
        (0.0, 0.0, "==", True),
        (2.0, (1.4, 2.8), "in", True),
        (3.0, (1.4, 2.8), "in", False),
        (math.nan, 1.0, "<", False),
        (math.inf, 1.0, ">", False),
        (None, 1.0, "<", False),
    ],
)
def test_check_result_relations(value, threshold, relation, expected):
    r = CheckResult.compare("c", value, threshold, relation)
    assert r.passed is expected
    assert r.line().startswith("[PASS]" if expected else "[FAIL]")


def test_check_result_unknown_relation():
    with pytest.raises(UsageError):
        CheckResult.compare("c", 1.0, 1.0, "~")


def test_check_result_json_roundtrip():
    r = CheckResult.compare("c", math.nan, (1, 2), "in", "exact", extra=np.arange(3))
    d = json.loads(json.dumps(r.to_dict()))
    assert d["passed"] is False and d["value"] == "nan" and d["details"]["extra"] == [0, 1, 2]


def test_config_scaled_keeps_windows():
    cfg = DEFAULT_CONFIG.scaled(10.0)
    assert cfg.conservation_tol == pytest.approx(1e-5)
    assert cfg.drift_tol == pytest.approx(1e-7)
    assert cfg.vn_ratio_window == DEFAULT_CONFIG.vn_ratio_window
    assert cfg.fit_window == DEFAULT_CONFIG.fit_window


@pytest.mark.parametrize("triple", [(1, 1, 3), (1, 2, 3), (0.5, 0.5, 1)])
def test_radial_integral_requires_convergence(triple):
    with pytest.raises(UsageError):
        appendix_b_check(*triple)
    with pytest.raises(UsageError):
        appendix_b_integral(*triple, 2.0)


def test_radial_integral_closed_form_at_zero():
    # t = 0, n = 1, alpha = beta = 1: int dr / (1 + r)^2 = 1
    assert appendix_b_integral(1, 1, 1, 0.0) == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("alpha, beta, n", [(3, 2, 2), (3, 1, 2), (4, 2, 3)])
def test_radial_integral_ratio_bounded_and_settles(alpha, beta, n):
    rep = appendix_b_check(alpha, beta, n)
    assert np.all(np.isfinite(rep.ratio)) and rep.min_ratio > 0
    assert rep.late_band < 1.6
    assert rep.band >= rep.late_band
    assert rep.log_variant is (beta == 1)
    assert appendix_b_bound(alpha, beta, n, 1.0) > 0


def test_algebra_checks_pass():
    results = algebra_checks(3)
    assert results and all(r.passed for r in results), [r.line() for r in results]


def test_identity_checks_pass():
    assert all(r.passed for r in identity_checks(3))


def test_averaging_checks_pass():
    results = averaging_checks()
    assert all(r.passed for r in results), [r.line() for r in results]


def test_weight_checks_pass():
    results = weight_checks(3, samples=16)
    assert [r.value for r in results][0] == 0.0
    assert all(r.passed for r in results), [r.line() for r in results]


def test_conservation_checks_pass():
    results = conservation_checks(times=(0.0, 5.0), rhos=(1.0, 4.0))
    assert all(r.passed for r in results), [r.line() for r in results]


@pytest.fixture(scope="module")
def shell2():
    return DistributionField(make_datum("shell-in-v", 2), Law.free(0.0))


def test_ks_massless_scale_invariant(shell2):
    G = DistributionField(make_datum("shell-in-v", 2, amplitude=7.0), Law.free(0.0))
    kw = dict(times=(1.0, 5.0), offsets=(0.5, 1.0))
    a = ks_check_massless(shell2, **kw)
    b = ks_check_massless(G, **kw)
    assert b.norm == pytest.approx(7.0 * a.norm, rel=1e-10)
    assert b.sup == pytest.approx(a.sup, rel=1e-10)
    assert a.refined_sup >= 0 and a.samples == len(a.table)


def test_ks_massless_zero_field():
    Z = DistributionField(make_datum("zero", 2), Law.free(0.0))
    rep = ks_check_massless(Z)
    assert rep.sup == 0.0 and rep.norm == 0.0


def test_ks_massless_rejects_massive():
    F = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0))
    with pytest.raises(UsageError):
        ks_check_massless(F)


def test_average_series_derivative_matches_difference(shell2):
    t = np.array([2.0, 3.0])
    h = 1e-4
    d = average_series(shell2, t, derivative="dt")
    fd = (average_series(shell2, t + h) - average_series(shell2, t - h)) / (2 * h)
    assert d == pytest.approx(fd, rel=1e-5)


def test_average_series_usage(shell2):
    with pytest.raises(UsageError):
        average_series(shell2, [1.0], derivative="nu")
    with pytest.raises(UsageError):
        average_series(shell2, [1.0], derivative="dx")


def test_improved_derivative_none_returns_base():
    F = DistributionField(make_datum("powerlaw-x-shell-v", 2), Law.free(0.0))
    base, der = improved_derivative_decay(F, np.geomspace(10.0, 100.0, 6), derivative="none")
    assert base is der and base.exponent < 0
