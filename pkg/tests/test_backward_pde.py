import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwdbarrier import backward_pde as bp
from fwdbarrier.analytic import up_out_call
from fwdbarrier.errors import ConfigurationError, GridError
from fwdbarrier.mesh import build_layer_xgrid
from fwdbarrier.model import MarketParams, VolSurface, reference_surface


def test_bootstrap_flat():
    assert bp.layer_boundary_value(3.0, 3.0, 100.0, 101.0, 103.0) == 3.0


def test_bootstrap_hand_value():
    assert bp.layer_boundary_value(5.0, 6.0, 100.0, 101.0, 103.0) == pytest.approx(4.875, abs=1e-14)


def test_bootstrap_quadratic_critical_point():
    y0, y1, y2 = 100.0, 100.7, 101.9
    assert bp.layer_boundary_value((y1 - y0) ** 2, (y2 - y0) ** 2, y0, y1, y2) == pytest.approx(0.0, abs=1e-12)


def test_bootstrap_vectorized():
    out = bp.layer_boundary_value(np.array([5.0, 1.0]), np.array([6.0, 1.0]), 100.0, 101.0, 103.0)
    np.testing.assert_allclose(out, [4.875, 1.0])


def test_bootstrap_degenerate_spacing():
    with pytest.raises(GridError):
        bp.layer_boundary_value(1.0, 2.0, 100.0, 101.0, 101.0)


def test_deal_validation():
    with pytest.raises(ConfigurationError):
        bp.BackwardDeal(-1.0, 120.0, 1.0)
    with pytest.raises(ConfigurationError):
        bp.BackwardDeal(10.0, 120.0, 0.0)


def test_zero_layer_stays_zero():
    m = MarketParams.flat(100.0, 0.1, 0.05)
    x = build_layer_xgrid(105.0, 104.9, 104.8, 0.5)
    top, sol = bp.solve_layer(x, 105.0, [110.0], reference_surface(), m, 1.0, np.zeros((52, 1)), n_steps=50,
                              keep_values=True)
    assert not sol.values.any() and not top.any()


def test_terminal_slice_is_payoff():
    m = MarketParams.flat(100.0, 0.1, 0.05)
    x = build_layer_xgrid(110.0, 109.9, 109.8, 0.5)
    strikes = np.array([90.0, 100.0])
    _, sol = bp.solve_layer(x, 110.0, strikes, reference_surface(), m, 1.0, np.zeros((22, 2)), n_steps=20,
                            barrier=120.0, keep_values=True)
    payoff = np.maximum(x[:, None] - strikes[None, :], 0.0)
    np.testing.assert_array_equal(sol.values[0, 1:-1], payoff[1:-1])
    _, dead = bp.solve_layer(x, 110.0, strikes, reference_surface(), m, 1.0, np.zeros((22, 2)), n_steps=20,
                             barrier=105.0, keep_values=True)
    assert not dead.values[0].any()


def test_knocked_out_and_strike_at_barrier():
    s, m = reference_surface(), MarketParams.flat(100.0, 0.1, 0.05)
    res = bp.price_backward(bp.BackwardDeal(50.0, 100.0, 1.0), s, m)
    assert res.knocked_out and res.price == 0.0
    res = bp.price_backward(bp.BackwardDeal(120.0, 120.0, 1.0), s, m, dy=0.1, n_steps=20)
    assert res.price == 0.0


@pytest.mark.parametrize("K", [0.0, 54.0, 99.0])
def test_constant_vol_matches_closed_form(K):
    m = MarketParams.flat(100.0, 0.1, 0.05)
    res = bp.price_backward(bp.BackwardDeal(K, 120.0, 1.0), VolSurface.constant(0.25), m, dy=0.05, n_steps=100)
    ref = up_out_call(100.0, K, 120.0, 1.0, 0.1, 0.05, 0.25)
    if ref > 1.0:
        assert res.price == pytest.approx(ref, rel=2e-3)
    else:
        assert res.price == pytest.approx(ref, abs=2e-3)


def test_ladder_matches_single_deals():
    s, m = reference_surface(), MarketParams.flat(100.0, 0.1, 0.05)
    strikes = np.array([0.0, 90.0, 110.0])
    lad = bp.price_ladder(strikes, 115.0, 0.5, s, m, dy=0.2, n_steps=40)
    for k, p in zip(strikes, lad.prices):
        one = bp.price_backward(bp.BackwardDeal(k, 115.0, 0.5), s, m, dy=0.2, n_steps=40)
        assert one.price == pytest.approx(p, rel=1e-12, abs=1e-14)


def test_ladder_monotone_in_strike_and_barrier():
    s, m = reference_surface(), MarketParams.flat(100.0, 0.1, 0.05)
    strikes = np.linspace(0.0, 110.0, 12)
    prev = None
    for B in (105.0, 110.0, 115.0):
        p = bp.price_ladder(strikes, B, 1.0, s, m, dy=0.2, n_steps=40).prices
        assert np.all(np.diff(p) <= 1e-9)
        if prev is not None:
            assert np.all(p >= prev - 1e-6)
        prev = p


def test_unknown_top_layer():
    with pytest.raises(ConfigurationError):
        bp.price_backward(bp.BackwardDeal(0.0, 110.0, 1.0), reference_surface(), MarketParams.flat(100.0), top_layer="x")


@settings(max_examples=10, deadline=None)
@given(vol=st.floats(0.15, 0.35), B=st.floats(105.0, 140.0))
def test_backward_below_vanilla_bound(vol, B):
    m = MarketParams.flat(100.0, 0.05, 0.02)
    p = bp.price_backward(bp.BackwardDeal(0.0, B, 0.5), VolSurface.constant(vol), m, dy=0.5, n_steps=20).price
    assert 0.0 <= p <= 100.0 / m.capitalization(0.5) + 1e-9
