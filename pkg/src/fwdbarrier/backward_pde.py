"""Backward Feynman-Kac PDE on the (spot, running maximum) state.

For a fixed deal ``(K, B, T)`` the value ``v(x, y, t)`` solves, on every
running-maximum level ``y``, a Black-Scholes type equation in ``x``

    v_t + mu x v_x + 1/2 sigma^2(x, y, t) x^2 v_xx - r v = 0,  0 < x < y,

with ``v(0) = 0`` and a Dirichlet value on the diagonal ``x = y`` taken from
the two levels above through the Neumann condition ``v_y(y, y, t) = 0``.
Levels are solved from ``y = B`` (where the option is dead) down to ``S0``.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, GridError, NumericalFailure
from .forward_pide import time_schedule
from .mesh import BackwardGrid, build_backward_ygrid, build_layer_xgrid
from .model import MarketParams, VolSurface

TOP_LAYERS = ("limit", "zero")


@dataclass(frozen=True)
class BackwardDeal:
    strike: float
    barrier: float
    maturity: float

    def __post_init__(self):
        if self.strike < 0.0:
            raise ConfigurationError("strike must be nonnegative")
        if not self.maturity > 0.0:
            raise ConfigurationError("maturity must be positive")


@dataclass(frozen=True)
class LayerSolution:
    """One running-maximum level: spot nodes and values at every time step.

    ``values[s, j, k]`` is ``v(x_j, y, t)`` for strike ``k`` at time-to-maturity
    index ``s`` (``s = 0`` is maturity).
    """

    level: float
    nodes: np.ndarray
    tau: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class BackwardResult:
    """Prices at ``(S0, S0, 0)`` for a batch of strikes sharing ``(B, T)``."""

    strikes: np.ndarray
    barrier: float
    maturity: float
    prices: np.ndarray
    knocked_out: bool
    n_levels: int
    runtime: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def price(self) -> float:
        if self.prices.size != 1:
            raise ValueError("result holds several strikes")
        return float(self.prices[0])


def layer_boundary_value(c1, c2, y_i: float, y_i1: float, y_i2: float):
    """Diagonal value at ``y_i`` from values at ``y_{i+1}`` and ``y_{i+2}``.

    Second-order Taylor expansion around ``y_i`` with ``c'(y_i) = 0``.
    """
    d2 = (y_i2 - y_i) ** 2
    d1 = (y_i1 - y_i) ** 2
    den = d2 - d1
    if not den > 0.0 or not (y_i < y_i1 < y_i2):
        raise GridError("bootstrap levels must be strictly increasing")
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    out = c2 + (d2 / den) * (c1 - c2)
    return out if out.ndim else float(out)


def _coefficients(surface: VolSurface, market: MarketParams, x, y, t_cal):
    """Drift, rate and ``sigma^2`` rows on the layer nodes for calendar times ``t_cal``."""
    mu = np.asarray(market.drift(t_cal), dtype=float).reshape(-1)
    rr = np.asarray(market.rate.rate(t_cal), dtype=float).reshape(-1)
    rows = surface.sigma2_rows(x[1:], y, t_cal)
    sig2 = np.zeros((rows.shape[0], len(x)))
    sig2[:, 1:] = rows
    return mu, rr, sig2


def solve_layer(nodes, level: float, strikes, surface: VolSurface, market: MarketParams, maturity: float,
                boundary, theta: float = 0.5, n_steps: int = 100, rannacher_steps: int = 2,
                barrier: Optional[float] = None, keep_values: bool = False):
    """Backward march of one level; returns ``(top, solution)``.

    ``boundary`` is the diagonal Dirichlet series, shape ``(n_tau, n_strikes)``
    on the schedule built from ``n_steps``. ``top[s, 0]`` and ``top[s, 1]`` are
    the values at the two nodes below the diagonal. ``solution`` is a
    :class:`LayerSolution` when ``keep_values`` is set (final slice otherwise).
    """
    x = np.ascontiguousarray(nodes, dtype=float)
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    sched = time_schedule(np.linspace(0.0, maturity, n_steps + 1), theta, rannacher_steps)
    nt = len(sched.times)
    t_cal = np.maximum(maturity - sched.times, 0.0)
    mu, rr, sig2 = _coefficients(surface, market, x, level, t_cal)
    alive = barrier is None or level < barrier
    V = np.ascontiguousarray(np.maximum(x[:, None] - strikes[None, :], 0.0) * float(alive))
    G = np.ascontiguousarray(np.broadcast_to(np.asarray(boundary, dtype=float), (nt, len(strikes))))
    top = np.zeros((nt, 2, len(strikes)))
    if keep_values:
        hist = np.zeros((nt, len(x), len(strikes)))
        hist[0] = V
        hist[0, 0] = 0.0
        hist[0, -1] = G[0]
        for s in range(nt - 1):
            Vs = hist[s].copy()
            tp = np.zeros((2, 2, len(strikes)))
            code = kernels.backward_layer_march(x, mu[s:s + 2], rr[s:s + 2], sig2[s:s + 2] if sig2.shape[0] > 1 else sig2,
                                                sched.dts[s:s + 1], sched.thetas[s:s + 1], Vs,
                                                np.ascontiguousarray(G[s:s + 2]), tp)
            if code != 0:
                raise NumericalFailure("backward layer solve broke down", layer=level, step=s)
            hist[s + 1] = Vs
            top[s + 1] = tp[1]
        top[0] = hist[0, [-2, -3]]
        return top, LayerSolution(level, x, sched.times, hist)
    code = kernels.backward_layer_march(x, np.ascontiguousarray(mu), np.ascontiguousarray(rr),
                                        np.ascontiguousarray(sig2), sched.dts, sched.thetas, V, G, top)
    if code != 0:
        raise NumericalFailure("backward layer solve broke down", layer=level, step=-code - 1)
    return top, LayerSolution(level, x, sched.times[-1:], V[None])


def price_backward(deal, surface: VolSurface, market: MarketParams, dy: float = 0.02, theta: float = 0.5,
                   n_steps: int = 200, rannacher_steps: int = 2, strikes: Optional[Sequence[float]] = None,
                   dx: Optional[float] = None, top_layer: str = "limit") -> BackwardResult:
    """Price ``(K, B, T)`` at ``(S0, S0, 0)`` by layering from ``y = B`` down to ``S0``.

    ``strikes`` prices several strikes with the same barrier in one pass
    (the layer matrices do not depend on the strike). ``dx`` overrides the
    spot step target, which otherwise equals ``dy``.
    """
    t0 = _time.perf_counter()
    if strikes is None:
        strikes = [deal.strike]
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    s0 = market.spot
    B, T = float(deal.barrier), float(deal.maturity)
    if B <= s0:
        return BackwardResult(strikes, B, T, np.zeros(len(strikes)), True, 0, _time.perf_counter() - t0)
    ygrid = build_backward_ygrid(s0, B, dy)
    if top_layer not in TOP_LAYERS:
        raise ConfigurationError(f"top_layer must be one of {TOP_LAYERS}")
    prices = _march_levels(ygrid, strikes, surface, market, T, theta, n_steps, rannacher_steps, dx or dy,
                           top_layer)
    prices = np.where(strikes >= B, 0.0, prices)
    meta = {"dy": dy, "dx": dx or dy, "n_steps": n_steps, "theta": theta, "backend": kernels.BACKEND}
    return BackwardResult(strikes, B, T, prices, False, ygrid.n_y + 2, _time.perf_counter() - t0, meta)


def _march_levels(ygrid: BackwardGrid, strikes, surface, market, T, theta, n_steps, rannacher_steps, dx,
                  top_layer="limit"):
    sched = time_schedule(np.linspace(0.0, T, n_steps + 1), theta, rannacher_steps)
    nt = len(sched.times)
    nk = len(strikes)
    n_y = ygrid.n_y
    B = ygrid.barrier
    # top series of the two levels above the current one
    above2 = np.zeros((nt, 2, nk))
    if top_layer == "limit":
        # y -> B from below: alive, knocked out on x = B
        x = build_layer_xgrid(B, ygrid.level(n_y), ygrid.level(n_y - 1), dx)
        above1, _ = solve_layer(x, B, strikes, surface, market, T, np.zeros((nt, nk)), theta, n_steps,
                                rannacher_steps)
    else:
        above1 = np.zeros((nt, 2, nk))
    for i in range(n_y, 0, -1):
        y_i = ygrid.level(i)
        if i == n_y:
            G = above1[:, 0]
        else:
            G = layer_boundary_value(above1[:, 0], above2[:, 1], y_i, ygrid.level(i + 1), ygrid.level(i + 2))
        x = build_layer_xgrid(y_i, ygrid.level(i - 1), ygrid.level(i - 2), dx)
        top, _ = solve_layer(x, y_i, strikes, surface, market, T, G, theta, n_steps, rannacher_steps)
        above2, above1 = above1, top
    if n_y >= 1:
        c = layer_boundary_value(above1[-1, 0], above2[-1, 1], ygrid.level(0), ygrid.level(1), ygrid.level(2))
    else:
        c = above1[-1, 0]
    return np.asarray(c, dtype=float).reshape(nk)


def price_ladder(strikes, barrier: float, maturity: float, surface: VolSurface, market: MarketParams,
                 **kw) -> BackwardResult:
    """All ``strikes`` for one ``(B, T)`` in a single batched pass."""
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    deal = BackwardDeal(float(strikes[0]), barrier, maturity)
    return price_backward(deal, surface, market, strikes=strikes, **kw)
