"""Closed-form oracles checked against each other, and the comparison metrics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fwdbarrier.analytic import (bs_call, joint_cdf_log, joint_density, lognormal_density, no_touch_forward,
                                 up_out_call)
from fwdbarrier.experiments import within_tolerance
from fwdbarrier.metrics import empirical_order, mixed_error, summarize

R, Q, VOL = 0.1, 0.05, 0.25


def test_joint_density_integrates_to_one():
    total, _ = integrate.dblquad(lambda x, y: joint_density(x, y, 100.0, 1.0, R, Q, VOL), 100.0, 600.0,
                                 lambda y: 1e-6, lambda y: y)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("K,B", [(0.0, 120.0), (100.0, 120.0), (90.0, 105.0)])
def test_up_out_call_equals_density_integral(K, B):
    val, _ = integrate.dblquad(lambda x, y: max(x - K, 0.0) * joint_density(x, y, 100.0, 1.0, R, Q, VOL),
                               100.0, B, lambda y: max(K, 1e-9), lambda y: y, epsabs=1e-10)
    assert up_out_call(100.0, K, B, 1.0, R, Q, VOL) == pytest.approx(np.exp(-R) * val, rel=1e-6, abs=1e-9)


def test_up_out_call_limits():
    assert up_out_call(100.0, 120.0, 120.0, 1.0, R, Q, VOL) == 0.0
    assert up_out_call(100.0, 50.0, 100.0, 1.0, R, Q, VOL) == 0.0
    assert up_out_call(100.0, 90.0, 1e4, 1.0, R, Q, VOL) == pytest.approx(bs_call(100.0, 90.0, 1.0, R, Q, VOL),
                                                                         rel=1e-10)
    assert no_touch_forward(100.0, 120.0, 1.0, R, Q, VOL) == up_out_call(100.0, 0.0, 120.0, 1.0, R, Q, VOL)


def test_joint_cdf_matches_density():
    a, m = 0.05, 0.15
    val, _ = integrate.dblquad(lambda aa, mm: _log_density(aa, mm), 0.0, m, lambda mm: -3.0, lambda mm: min(a, mm))
    assert joint_cdf_log(a, m, 1.0, R, Q, VOL) == pytest.approx(val, abs=1e-7)


def _log_density(a, m):
    from fwdbarrier.analytic import joint_density_log
    return float(joint_density_log(a, m, 1.0, R, Q, VOL))


def test_lognormal_integrates_to_forward():
    mean, _ = integrate.quad(lambda x: x * lognormal_density(x, 100.0, 1.0, R, Q, VOL), 0.0, 1000.0)
    assert mean == pytest.approx(100.0 * np.exp(R - Q), rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(k1=st.floats(0.0, 119.0), k2=st.floats(0.0, 119.0), b1=st.floats(100.5, 200.0), b2=st.floats(100.5, 200.0))
def test_up_out_call_monotone(k1, k2, b1, b2):
    lo_k, hi_k = sorted((k1, k2))
    lo_b, hi_b = sorted((b1, b2))
    assert up_out_call(100.0, hi_k, lo_b, 1.0, R, Q, VOL) <= up_out_call(100.0, lo_k, lo_b, 1.0, R, Q, VOL) + 1e-12
    assert up_out_call(100.0, lo_k, lo_b, 1.0, R, Q, VOL) <= up_out_call(100.0, lo_k, hi_b, 1.0, R, Q, VOL) + 1e-12


def test_mixed_error_and_tolerance():
    ref = np.array([42.0, 0.5, 0.0])
    val = np.array([42.042, 0.5004, 0.0])
    np.testing.assert_allclose(mixed_error(val, ref), [1e-3, 4e-4, 0.0], rtol=1e-9, atol=1e-15)
    assert not mixed_error(ref, ref).any()
    np.testing.assert_array_equal(within_tolerance(val, ref, 5e-3, 5e-4), [True, True, True])
    np.testing.assert_array_equal(within_tolerance(val, ref, 5e-4, 1e-4), [False, False, True])


def test_summaries_and_orders():
    assert summarize([])["count"] == 0
    assert summarize([1.0, 3.0]) == {"count": 2, "mean": 2.0, "max": 3.0}
    np.testing.assert_allclose(empirical_order([4.0, 1.0, 0.25]), [2.0, 2.0])
