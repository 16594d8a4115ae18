"""Recovery of the mimicking volatility from a capitalized price cube.

Inverting the forward equation node by node gives

    sigma^2(K, B, T) = [C~_BT - K/B^2 C~_T(0) - (B - K)/B C~_TB(0) + mu K C~_KB] / (1/2 K^2 C~_KKB),

where ``C~(0)`` is the zero-strike column. The denominator is, up to the
factor ``K^2/2``, the capitalized joint density of spot and maximum, so the
quotient is only meaningful where that density is not negligible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import DomainError
from .forward_pide import PHI_STENCIL, PriceCube
from .model import VolSurface

log = logging.getLogger(__name__)

DEFAULT_TAU_SCALE = 1e-7
# the T = 0 face is kinked; slices closer to it than this are never used
EXCLUDED_TIME_SLICES = 2
# strike/barrier stencils reach this many nodes, so stay clear of K = B
KB_MARGIN = 3
# density floor relative to the slice peak; keeps the mask scale invariant
DEFAULT_REL_DENSITY = 1e-2
# barriers this close to S0 (as a fraction of S0) see the sharp corner density
DEFAULT_BARRIER_MARGIN = 2e-2


@dataclass(frozen=True)
class CubeDerivatives:
    """Partials of ``C~`` on the cube nodes, arrays shaped like ``cube.values``.

    ``c0_t`` and ``c0_tb`` are the zero-strike terms, shaped ``(n_t, n_b)``.
    """

    c_bt: np.ndarray
    c_kb: np.ndarray
    c_kkb: np.ndarray
    c0_t: np.ndarray
    c0_tb: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class RecoveredSurface:
    """``sigma_hat`` on the cube nodes with its validity mask (NaN where invalid)."""

    times: np.ndarray
    strikes: np.ndarray
    barriers: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray
    tau_den: float
    report: dict = field(default_factory=dict)

    def coverage(self, t_min: float = 0.0, t_max: float = np.inf, k_min: float = 0.0) -> float:
        """Share of nodes with ``S0 < B``, ``k_min < K < B`` and ``t`` in range that are valid."""
        region = self._region(t_min, t_max, k_min)
        total = int(region.sum())
        return float((self.mask & region).sum() / total) if total else 0.0

    def _region(self, t_min, t_max, k_min):
        T, B, K = np.meshgrid(self.times, self.barriers, self.strikes, indexing="ij")
        return (T >= t_min) & (T <= t_max) & (K > k_min) & (K < B) & (B > self.barriers[0])

    def relative_error(self, surface: VolSurface, t_min: float = 0.0, t_max: float = np.inf) -> np.ndarray:
        """``|sigma_hat / sigma - 1|`` on valid nodes with ``t`` in range (flattened)."""
        T, B, K = np.meshgrid(self.times, self.barriers, self.strikes, indexing="ij")
        sel = self.mask & (T >= t_min) & (T <= t_max)
        if not sel.any():
            return np.zeros(0)
        ref = surface.sigma(K[sel], B[sel], T[sel])
        return np.abs(self.sigma[sel] / ref - 1.0)

    def to_rows(self):
        """``(K, B, T, sigma_hat, mask)`` rows for export."""
        for k, t in enumerate(self.times):
            for j, b in enumerate(self.barriers):
                for i, kk in enumerate(self.strikes):
                    if kk < b:
                        yield float(kk), float(b), float(t), float(self.sigma[k, j, i]), bool(self.mask[k, j, i])


def _d1(a: np.ndarray, coords, axis: int) -> np.ndarray:
    """Second-order first derivative, one-sided at the faces."""
    if a.shape[axis] < 3:
        return np.zeros_like(a)
    return np.gradient(a, coords, axis=axis, edge_order=2)


def _d2_uniform(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central second difference along ``axis``; zero on the two faces."""
    out = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    lo, mid, hi = list(sl), list(sl), list(sl)
    lo[axis], mid[axis], hi[axis] = slice(None, -2), slice(1, -1), slice(2, None)
    out[tuple(mid)] = (a[tuple(hi)] - 2.0 * a[tuple(mid)] + a[tuple(lo)]) / (h * h)
    return out


def cube_derivatives(cube_or_values, times=None, dk: Optional[float] = None) -> CubeDerivatives:
    """All partials needed by the recovery formula.

    Accepts a :class:`PriceCube`, or a raw ``values[t, b, k]`` array with its
    ``times`` and uniform step ``dk`` (used for both ``K`` and ``B``).
    """
    if isinstance(cube_or_values, PriceCube):
        v = cube_or_values.values
        times = cube_or_values.times
        dk = cube_or_values.grid.dk
    else:
        v = np.asarray(cube_or_values, dtype=float)
        if times is None or dk is None:
            raise ValueError("raw arrays need times and dk")
        times = np.asarray(times, dtype=float)
    nt, nb, nk = v.shape
    b_axis = np.arange(nb) * dk
    k_axis = np.arange(nk) * dk
    c_t = _d1(v, times, 0)
    c_bt = _d1(c_t, b_axis, 1)
    c_k = _d1(v, k_axis, 2)
    c_kb = _d1(c_k, b_axis, 1)
    c_kk = _d2_uniform(v, dk, 2)
    c_kkb = _d1(c_kk, b_axis, 1)
    c0_t = c_t[:, :, 0]
    c0_tb = c_bt[:, :, 0]
    valid = np.ones(v.shape, dtype=bool)
    valid[:, :2] = False
    valid[:, -2:] = False
    valid[:, :, :2] = False
    valid[:, :, -2:] = False
    valid[: min(EXCLUDED_TIME_SLICES, nt)] = False
    if nt < 3:
        valid[:] = False
    return CubeDerivatives(c_bt, c_kb, c_kkb, c0_t, c0_tb, valid)


def recover_sigma(cube: PriceCube, market=None, tau_den: Optional[float] = None,
                  rel_density: float = DEFAULT_REL_DENSITY,
                  barrier_margin: float = DEFAULT_BARRIER_MARGIN) -> RecoveredSurface:
    """Recovered ``sigma_hat`` on the cube with validity mask.

    A node is valid when its stencils fit in the cube, ``K <= B - 3 dK``,
    ``B >= S0 (1 + barrier_margin)``, the denominator is at least ``tau_den``
    and at least ``rel_density`` times its peak over the same time slice,
    and ``sigma_hat^2 > 0``.

    Parameters
    ----------
    cube : PriceCube
        Capitalized cube with several stored time slices.
    market : MarketParams, optional
        Defaults to the cube's market; only the drift is used.
    tau_den : float, optional
        Absolute denominator threshold, default ``1e-7 / S0``.
    rel_density : float
        Denominator floor relative to the slice peak. Where the joint density
        is this thin the cube's discretization error dominates the third
        derivative. Zero disables it.
    barrier_margin : float
        Relative distance of ``B`` above ``S0`` below which nodes are masked.
        The density is sharply peaked near ``(S0, S0)`` and the cube does not
        resolve its derivatives there at practical steps.
    """
    market = cube.market if market is None else market
    g = cube.grid
    tau = DEFAULT_TAU_SCALE / g.spot if tau_den is None else float(tau_den)
    if rel_density < 0.0 or barrier_margin < 0.0:
        raise ValueError("rel_density and barrier_margin must be nonnegative")
    d = cube_derivatives(cube)
    T, B, K = np.meshgrid(cube.times, g.barriers, g.strikes, indexing="ij")
    mu = np.asarray(market.drift(cube.times), dtype=float).reshape(-1, 1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = (d.c_bt - (K / B**2) * d.c0_t[:, :, None] - ((B - K) / B) * d.c0_tb[:, :, None]
               + mu * K * d.c_kb)
        den = 0.5 * K * K * d.c_kkb
        s2 = num / den
    geom = d.valid & (K <= B - KB_MARGIN * g.dk) & (B > g.spot) & (B >= g.spot * (1.0 + barrier_margin))
    peak = np.where(geom, np.nan_to_num(den, nan=0.0, posinf=0.0, neginf=0.0), 0.0).max(axis=(1, 2))
    floor = np.maximum(tau, rel_density * peak)[:, None, None]
    dense = geom & (den >= floor)
    negative = dense & ~(s2 > 0.0)
    mask = dense & (s2 > 0.0) & np.isfinite(s2)
    if negative.any():
        log.warning("recovery: %d nodes with nonpositive sigma^2 masked", int(negative.sum()))
    sigma = np.where(mask, np.sqrt(np.where(mask, s2, 1.0)), np.nan)
    report = {
        "tau_den": tau,
        "rel_density": rel_density,
        "barrier_margin": barrier_margin,
        "interior_nodes": int(geom.sum()),
        "valid_nodes": int(mask.sum()),
        "below_threshold": int((geom & ~(den >= floor)).sum()),
        "negative": int(negative.sum()),
    }
    return RecoveredSurface(cube.times.copy(), g.strikes.copy(), g.barriers.copy(), sigma, mask, tau, report)


@dataclass(frozen=True)
class FntResidual:
    residual: float
    dc0_dt: float
    boundary_term: float
    fnt: float


def fnt_residual(cube: PriceCube, boundary: Union[str, Callable, "object"], B: float, T: float,
                 surface: VolSurface) -> FntResidual:
    """Residual of the zero-strike forward equation at ``(B, T)``.

    ``boundary`` is ``"stencil"`` (third difference of the cube at ``K = B``)
    or a callable ``(B, T) -> d^3 C~ / dK^2 dB`` at ``K = B`` (for instance
    built from a density solve).
    """
    g = cube.grid
    if B <= g.spot:
        k = cube.slice_index(T)
        return FntResidual(0.0, 0.0, 0.0, 0.0)
    j = g.barrier_index(B)
    k = cube.slice_index(T)
    if k == 0 or k == len(cube.times) - 1:
        raise DomainError("fnt residual needs a stored slice on both sides of T")
    ts = cube.times
    col = cube.values[:, j, 0]
    h0, h1 = ts[k] - ts[k - 1], ts[k + 1] - ts[k]
    dc0 = (h0 * h0 * col[k + 1] - h1 * h1 * col[k - 1] + (h1 * h1 - h0 * h0) * col[k]) / (h0 * h1 * (h0 + h1))
    if isinstance(boundary, str):
        if boundary != "stencil":
            raise ValueError("boundary must be 'stencil' or a callable")
        n = g.layer_size(j)
        u = cube.values[k, j, n - 4: n]
        term = -float(PHI_STENCIL @ u) / g.dk**3
    else:
        term = float(boundary(B, T))
    s2 = float(surface.sigma2(B, B, T))
    res = dc0 + 0.5 * s2 * B**3 * term
    fnt = float(cube.values[k, j, 0] / cube.market.capitalization(T))
    return FntResidual(float(res), float(dc0), term, fnt)
