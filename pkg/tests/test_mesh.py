import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwdbarrier.errors import ConfigurationError, GridError
from fwdbarrier.mesh import build_backward_ygrid, build_forward_grid, build_layer_xgrid, grading_map


def _divisor_oracle(spot, b_max, target):
    """Brute force: largest step ``<= target`` of the form ``10^-6 n`` dividing both lengths."""
    s = round(spot * 1e6)
    w = round((b_max - spot) * 1e6)
    best = None
    for n in range(1, round(target * 1e6) + 1):
        if s % n == 0 and w % n == 0:
            best = n
    return best * 1e-6


def test_forward_grid_reference_scale():
    g = build_forward_grid(100.0, 120.0, 1.0, 0.02, 1e-3)
    assert g.dk == 0.02 and g.db == g.dk
    assert len(g.barriers) - 1 == 1000
    assert g.strikes[0] == 0.0 and g.strikes[-1] == 120.0
    assert g.b_max == 120.0
    assert g.n_time == 1000 and g.times[-1] == 1.0


def test_forward_grid_divisor_search():
    g = build_forward_grid(100.0, 120.0, 1.0, 0.03, 1e-3)
    assert g.dk == 0.025
    assert g.dk == pytest.approx(_divisor_oracle(100.0, 120.0, 0.03), abs=1e-12)


def test_forward_grid_single_layer():
    g = build_forward_grid(100.0, 100.5, 1.0, 0.5, 0.1)
    assert len(g.barriers) == 2
    assert g.layer_size(0) == int(100.0 / 0.5) + 1


def test_forward_grid_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        build_forward_grid(100.0, 90.0, 1.0, 0.1, 0.01)
    with pytest.raises(ConfigurationError):
        build_forward_grid(100.0, 120.0, 1.0, 0.0, 0.01)


@settings(max_examples=60, deadline=None)
@given(spot=st.sampled_from([50.0, 80.0, 100.0, 123.5]), width=st.sampled_from([0.5, 7.0, 20.0, 33.3]),
       target=st.floats(0.01, 0.6))
def test_barriers_land_on_strikes(spot, width, target):
    g = build_forward_grid(spot, spot + width, 1.0, target, 0.01)
    assert g.dk <= target * (1 + 1e-12)
    assert g.barriers[0] == pytest.approx(spot, abs=1e-9)
    np.testing.assert_array_equal(g.barriers, g.strikes[g.s0_index:])
    assert g.strikes[-1] == pytest.approx(spot + width, abs=1e-9)
    for j in (0, len(g.barriers) - 1):
        assert g.strike_index(g.barriers[j]) == g.s0_index + j


def test_ygrid_endpoints_and_midpoint():
    yg = build_backward_ygrid(100.0, 120.0, 0.02)
    assert yg.levels[0] == 100.0 and yg.levels[-1] == 120.0
    assert yg.n_y == 1000
    theta = 20.0 / math.expm1(2.0)
    assert theta == pytest.approx(3.130352, abs=1e-6)
    assert float(grading_map(0.5, 100.0, 120.0)) == pytest.approx(105.378, abs=1e-3)
    assert float(grading_map(1.0, 100.0, 120.0)) == pytest.approx(120.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(width=st.floats(0.5, 50.0), dy=st.floats(0.01, 1.0))
def test_ygrid_increasing_and_convex(width, dy):
    yg = build_backward_ygrid(100.0, 100.0 + width, dy)
    gaps = np.diff(yg.levels[:-1])
    assert np.all(np.diff(yg.levels) > 0)
    assert np.all(np.diff(gaps) >= -1e-12)


def test_ygrid_deterministic():
    a = build_backward_ygrid(100.0, 117.3, 0.05)
    b = build_backward_ygrid(100.0, 117.3, 0.05)
    np.testing.assert_array_equal(a.levels, b.levels)


def test_layer_xgrid():
    x = build_layer_xgrid(120.0, 119.9, 119.8, 0.02)
    n_x = math.ceil(120.0 / 0.02)
    assert n_x == 6000 and len(x) == n_x + 1
    assert x[0] == 0.0
    assert tuple(x[-3:]) == (119.8, 119.9, 120.0)
    dx = 119.8 / (n_x - 2)
    np.testing.assert_allclose(np.diff(x[: n_x - 1]), dx, rtol=1e-10)
    assert np.all(np.diff(x) > 0)


def test_layer_xgrid_errors():
    with pytest.raises(GridError):
        build_layer_xgrid(1.0, 0.9, 0.8, 0.5)
    with pytest.raises(GridError):
        build_layer_xgrid(1.0, 1.1, 0.8, 0.01)
