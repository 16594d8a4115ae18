"""Kolmogorov forward equation for the joint density of spot and running maximum.

On each running-maximum level ``y`` the density ``phi(x, y, t)``, ``0 < x < y``,
follows a one-dimensional Fokker-Planck equation in ``x``. The levels are
coupled only through the flux relation on the diagonal ``x = y``, which
carries mass from a level to the next one up. Levels are therefore marched
one after the other from ``y = S0`` upwards, each over the whole time range.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .analytic import joint_density
from .errors import ConfigurationError, DomainError, GridError, NumericalFailure, TruncationError
from .forward_pide import time_schedule
from .model import MarketParams, VolSurface

log = logging.getLogger(__name__)

CLIP_FLOOR = -1e-8
MAX_MASS_LOSS = 0.02
INIT_MODES = ("bump", "warm")
# warm start age per unit of dx / S0: resolved on the grid, young enough to keep the frozen-vol bias small
WARM_TIME_PER_STEP = 8.0


@dataclass(frozen=True)
class DensityGrid:
    """Solved density on the triangle ``0 <= x <= y``, ``S0 <= y <= B_Max``.

    ``slices[k, j, i]`` is ``phi(i dx, y_j, stored_times[k])``, zero above the
    diagonal. ``diag[s, j]`` is the trace ``phi(y_j, y_j-, times[s])`` and
    ``mass[s]`` the total mass at every step.
    """

    spot: float
    dx: float
    levels: np.ndarray
    times: np.ndarray
    stored_times: np.ndarray
    slices: np.ndarray
    diag: np.ndarray
    mass: np.ndarray
    eps: float
    clipped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def b_max(self) -> float:
        return float(self.levels[-1])

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.slices.shape[2]) * self.dx

    def diag_index(self, j: int) -> int:
        return int(round(self.levels[j] / self.dx))

    def level_index(self, y: float) -> int:
        j = int(round((y - self.spot) / self.dx))
        if j < 0 or j >= len(self.levels) or abs(self.levels[j] - y) > 1e-9 * max(1.0, abs(y)):
            raise DomainError(f"level {y} is not on the density grid")
        return j

    def slice(self, t: float) -> np.ndarray:
        """Density slice at ``t``; linear interpolation between stored slices with a warning."""
        ts = self.stored_times
        k = int(np.argmin(np.abs(ts - t)))
        if abs(ts[k] - t) <= 1e-12 * max(1.0, t):
            return self.slices[k]
        if t < ts[0] or t > ts[-1] or len(ts) < 2:
            raise DomainError(f"t={t} outside the stored slices")
        warnings.warn(f"t={t} not stored, interpolating between slices", RuntimeWarning, stacklevel=3)
        hi = int(np.searchsorted(ts, t))
        w = (t - ts[hi - 1]) / (ts[hi] - ts[hi - 1])
        return (1.0 - w) * self.slices[hi - 1] + w * self.slices[hi]

    def diagonal(self, y, t):
        """``phi(y, y-, t)`` by linear interpolation in ``t`` (and ``y`` between levels)."""
        y = float(y)
        t = np.asarray(t, dtype=float)
        if y < self.spot or y > self.b_max:
            raise DomainError(f"level {y} outside [{self.spot}, {self.b_max}]")
        pos = (y - self.spot) / self.dx
        j0 = min(int(math.floor(pos + 1e-9)), len(self.levels) - 1)
        w = pos - j0
        tr = self.diag[:, j0]
        if w > 1e-9 and j0 + 1 < len(self.levels):
            tr = (1.0 - w) * tr + w * self.diag[:, j0 + 1]
        out = np.interp(t, self.times, tr)
        warm = self.meta.get("warm_params")
        early = t < self.times[0]
        if warm is not None and np.any(early):
            # before a warm start the trace is the closed form it started from
            vol, r, q = warm
            te = np.where(early, t, self.times[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                ref = joint_density(y * (1.0 - 1e-12), y, self.spot, np.maximum(te, 1e-300), r, q, vol)
            out = np.where(early, np.nan_to_num(ref), out)
        return out if out.ndim else float(out)

    def boundary_density(self):
        """Callable ``(B, times) -> phi(B, B-, times)`` for the forward solver."""
        return lambda b, t: self.diagonal(b, t)

    def marginal_x(self, t: float) -> np.ndarray:
        """Density of ``S_t`` on the spot nodes (integrated over ``y``)."""
        return _trapz_levels(self.slice(t), self.dx)

    def to_rows(self, t: float):
        """``(x, y, t, phi)`` rows on and below the diagonal for export."""
        sl = self.slice(t)
        for j, y in enumerate(self.levels):
            for i in range(self.diag_index(j) + 1):
                yield i * self.dx, float(y), float(t), float(sl[j, i])


def _trapz_levels(sl: np.ndarray, dx: float) -> np.ndarray:
    """Trapezoid over the level axis of a slice ``(n_levels, n_x)``."""
    if sl.shape[0] == 1:
        return np.zeros(sl.shape[1])
    return dx * (sl.sum(axis=0) - 0.5 * (sl[0] + sl[-1]))


def _trapz_row(row: np.ndarray, dx: float) -> float:
    return float(dx * (row.sum() - 0.5 * (row[0] + row[-1])))


def triangle_mass(sl: np.ndarray, dx: float, n0: int) -> float:
    """Trapezoid mass of a slice whose level ``j`` has ``n0 + j + 1`` nodes."""
    per = np.array([_trapz_row(sl[j, : n0 + j + 1], dx) for j in range(sl.shape[0])])
    return float(_trapz_row(per, dx)) if len(per) > 1 else float(per[0] * dx)


def warm_params(surface: VolSurface, market: MarketParams, warm_time: float):
    """``(vol, r, q)`` of the constant-vol warm start.

    The variance at ``(S0, S0)`` is averaged over ``[0, warm_time]``.
    """
    spot = market.spot
    tq = np.linspace(0.0, warm_time, 33)
    s2 = np.asarray(surface.sigma2(np.full(tq.shape, spot), np.full(tq.shape, spot), tq), dtype=float)
    vol = float(np.sqrt(np.trapezoid(s2, tq) / warm_time))
    r = float(market.rate.rate(0.0))
    return vol, r, r - float(market.drift(0.0))


def initial_density(spot: float, dx: float, n_levels: int, eps: float, init: str = "bump",
                    surface: Optional[VolSurface] = None, market: Optional[MarketParams] = None,
                    warm_time: float = 0.0) -> np.ndarray:
    """Initial slice ``(n_levels, n_x)``: a normalized Gaussian bump at ``(S0, S0)``
    or the constant-vol joint density at ``warm_time``.

    The warm start uses the variance at ``(S0, S0)`` averaged over
    ``[0, warm_time]`` and the rates at 0.
    """
    n0 = int(round(spot / dx))
    nx = n0 + n_levels
    x = np.arange(nx) * dx
    y = spot + np.arange(n_levels) * dx
    X, Y = np.meshgrid(x, y)
    if init == "bump":
        P = np.exp(-((X - spot) ** 2 + (Y - spot) ** 2) / (2.0 * eps * eps))
    elif init == "warm":
        if surface is None or market is None or not warm_time > 0.0:
            raise ConfigurationError("warm start needs surface, market and warm_time > 0")
        vol, r, q = warm_params(surface, market, warm_time)
        P = joint_density(X, Y, spot, warm_time, r, q, vol)
    else:
        raise ConfigurationError(f"init must be one of {INIT_MODES}")
    P = np.where(X <= Y + 1e-12, P, 0.0)
    P[:, 0] = 0.0
    mass = triangle_mass(P, dx, n0)
    if not mass > 0.0:
        raise GridError("initial density has no mass on the grid")
    return P / mass


def solve_kfe(surface: VolSurface, market: MarketParams, dx: float, b_max: float, T: float,
              n_steps: int = 200, eps: Optional[float] = None, theta: float = 0.5, rannacher_steps: int = 2,
              init: str = "warm", warm_time: Optional[float] = None, store_times: Optional[Sequence[float]] = None,
              check_mass: bool = True) -> DensityGrid:
    """March the joint density from ``t = 0`` (or ``warm_time``) to ``T``.

    Parameters
    ----------
    dx : float
        Step in both ``x`` and ``y``; ``S0/dx`` and ``(b_max - S0)/dx`` must be integers.
    eps : float, optional
        Bump width, default ``4 dx``; must be at least ``2 dx``.
    theta : float
        1 is implicit Euler; 0.5 gives Crank-Nicolson after ``rannacher_steps``
        implicit half steps.
    init : {"warm", "bump"}
        ``"warm"`` starts at ``warm_time`` from the constant-vol joint density
        with the corner variance averaged over the warm-up; ``"bump"`` starts at 0 from a Gaussian bump of
        width ``eps``, which biases prices at O(1) for practical ``dx``.
    warm_time : float, optional
        Start time of the warm start, default ``WARM_TIME_PER_STEP * dx / S0``;
        snapped to the step grid of ``[0, T]``.
    store_times : sequence of float, optional
        Times at which full slices are kept; default ``[T]``.
    """
    s0 = market.spot
    if not dx > 0.0:
        raise ConfigurationError("dx must be positive")
    n0f, nlf = s0 / dx, (b_max - s0) / dx
    n0, nl = int(round(n0f)), int(round(nlf))
    if abs(n0f - n0) > 1e-9 or abs(nlf - nl) > 1e-9 or nl < 2 or n0 < 4:
        raise GridError("dx must divide S0 and B_Max - S0 with at least two levels above S0")
    eps = 4.0 * dx if eps is None else float(eps)
    if eps < 2.0 * dx - 1e-12:
        raise ConfigurationError("mollification width must be at least 2 dx")
    if init == "warm" and warm_time is None:
        warm_time = WARM_TIME_PER_STEP * dx / s0
    grid_t = np.linspace(0.0, T, n_steps + 1)
    k0 = 0
    if init == "warm":
        # start on the step grid of [0, T] so round store times stay step times
        k0 = max(1, int(round(warm_time / (T / n_steps))))
        if k0 >= n_steps:
            raise ConfigurationError("warm_time must be below T by at least one step")
        warm_time = float(grid_t[k0])
    t0 = float(grid_t[k0])
    sched = time_schedule(grid_t[k0:], theta, rannacher_steps)
    times = sched.times
    nt = len(times)
    store = np.array([T] if store_times is None else sorted(store_times), dtype=float)
    store_idx = []
    for ts in store:
        k = int(np.argmin(np.abs(times - ts)))
        if abs(times[k] - ts) > 1e-9:
            raise DomainError(f"store time {ts} is not a step time")
        store_idx.append(k)
    n_levels = nl + 1
    levels = s0 + np.arange(n_levels) * dx
    P0 = initial_density(s0, dx, n_levels, eps, init, surface, market, warm_time or 0.0)
    mu = np.ascontiguousarray(np.asarray(market.drift(times), dtype=float).reshape(-1))
    slices = np.zeros((len(store), n_levels, n0 + n_levels))
    diag = np.zeros((nt, n_levels))
    level_mass = np.zeros((nt, n_levels))
    g_prev1 = np.zeros(nt)
    g_prev2 = np.zeros(nt)
    clipped = 0
    for j in range(n_levels):
        n = n0 + j + 1
        x = np.arange(n) * dx
        rows = surface.sigma2_rows(x[1:], levels[j], times)
        sx2 = np.zeros((rows.shape[0], n))
        sx2[:, 1:] = rows * x[None, 1:] ** 2
        P = np.zeros((nt, n))
        P[0] = P0[j, :n]
        if j == 0:
            e0, e1, e2 = 0.0, 0.0, 0.0
        elif j == 1:
            e0, e1, e2 = 1.0 / dx, -1.0 / dx, 0.0
        else:
            e0, e1, e2 = 1.5 / dx, -2.0 / dx, 0.5 / dx
        gout = np.zeros(nt)
        code = kernels.density_layer_march(dx, float(levels[j]), mu, np.ascontiguousarray(sx2), sched.dts,
                                           sched.thetas, P, g_prev1, g_prev2, e0, e1, e2, int(j == 0), gout,
                                           CLIP_FLOOR)
        if code < 0:
            raise NumericalFailure("density layer solve broke down", layer=j, step=-code - 1)
        clipped += code
        g_prev2, g_prev1 = g_prev1, gout
        diag[:, j] = P[:, -1]
        level_mass[:, j] = dx * (P.sum(axis=1) - 0.5 * (P[:, 0] + P[:, -1]))
        for k, s in enumerate(store_idx):
            slices[k, j, :n] = P[s]
    mass = dx * (level_mass.sum(axis=1) - 0.5 * (level_mass[:, 0] + level_mass[:, -1]))
    total_nodes = nt * sum(n0 + j + 1 for j in range(n_levels))
    if clipped:
        log.warning("density: clipped %d of %d node values below %g", clipped, total_nodes, CLIP_FLOOR)
    if check_mass and mass[-1] < 1.0 - MAX_MASS_LOSS:
        s_bad = int(np.argmax(mass < 1.0 - MAX_MASS_LOSS))
        raise TruncationError(f"density lost more than {MAX_MASS_LOSS:.0%} of its mass by t={times[s_bad]:.4g}; "
                              f"raise B_Max")
    meta = {"theta": theta, "n_steps": n_steps, "init": init, "warm_time": t0,
            "warm_params": warm_params(surface, market, t0) if init == "warm" else None, "backend": kernels.BACKEND,
            "clip_fraction": clipped / total_nodes}
    return DensityGrid(float(s0), float(dx), levels, times, np.asarray(times[store_idx]), slices, diag, mass,
                       eps, clipped, meta)


def price_from_density(density: DensityGrid, K: float, B: float, T: float, market: MarketParams) -> float:
    """``D(T) * int int (x - K)^+ 1{y < B} phi dx dy`` by the trapezoid rule on the triangle."""
    if B <= density.spot or K >= B:
        return 0.0
    if B > density.b_max + 1e-12:
        raise DomainError(f"B={B} above the density domain B_Max={density.b_max}")
    sl = density.slice(T)
    pos = (B - density.spot) / density.dx
    jb = int(math.floor(pos + 1e-9))
    x = density.x
    pay = np.maximum(x - K, 0.0)
    per = np.array([_trapz_row(sl[j, : density.diag_index(j) + 1] * pay[: density.diag_index(j) + 1], density.dx)
                    for j in range(min(jb, len(density.levels) - 1) + 1)])
    total = _trapz_row(per, density.dx) if len(per) > 1 else 0.0
    frac = pos - jb
    if frac > 1e-9 and jb + 1 < len(density.levels):
        j = jb + 1
        nxt = _trapz_row(sl[j, : density.diag_index(j) + 1] * pay[: density.diag_index(j) + 1], density.dx)
        hi = per[-1] + frac * (nxt - per[-1])
        total += 0.5 * frac * density.dx * (per[-1] + hi)
    return float(market.discount(T)) * total


def boundary_third_derivative(density: DensityGrid, B: float, T: float, market: MarketParams) -> float:
    """``D(T) Q(T) phi(B, B-, T)``, the capitalized ``d^3 C / dK^2 dB`` at ``K = B``."""
    phi = float(density.diagonal(B, T))
    return float(market.discount(T) * market.capitalization(T)) * phi
