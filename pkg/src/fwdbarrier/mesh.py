"""Aligned strike/barrier/time lattice and the graded running-maximum mesh."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, GridError

GRADING_LAMBDA = 2.0


def _decimal(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def _fraction_gcd(a: Fraction, b: Fraction) -> Fraction:
    den = a.denominator * b.denominator
    return Fraction(math.gcd(a.numerator * b.denominator, b.numerator * a.denominator), den)


def _is_decimal_divisor(k: int) -> bool:
    for p in (2, 5):
        while k % p == 0:
            k //= p
    return k == 1


def _ceil(x: float) -> int:
    # guards against ceil(6000.000000000001) == 6001 from decimal round-off
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))


@dataclass(frozen=True)
class ForwardGrid:
    """Uniform (K, B, T) lattice with ``dk == db`` and ``B_j`` on the strike grid.

    Nodes are generated from integer indices: ``K_i = i * dk``,
    ``B_j = K_{s0_index + j}`` and ``T_m = m * dt``.
    """

    spot: float
    dk: float
    dt: float
    s0_index: int
    n_barrier: int
    n_time: int
    t_max: float

    @property
    def db(self) -> float:
        return self.dk

    @property
    def n_strike(self) -> int:
        return self.s0_index + self.n_barrier

    @property
    def b_max(self) -> float:
        return self.n_strike * self.dk

    @property
    def strikes(self) -> np.ndarray:
        return np.arange(self.n_strike + 1) * self.dk

    @property
    def barriers(self) -> np.ndarray:
        return self.strikes[self.s0_index:]

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_time + 1) * self.dt
        t[-1] = self.t_max
        return t

    def layer_size(self, j: int) -> int:
        """Number of strike nodes ``K_0 .. B_j`` in barrier layer ``j``."""
        return self.s0_index + j + 1

    def strike_index(self, k: float) -> int:
        i = int(round(k / self.dk))
        if abs(i * self.dk - k) > 1e-9 * max(1.0, abs(k)):
            raise GridError(f"strike {k} is not a grid node")
        return i

    def barrier_index(self, b: float) -> int:
        return self.strike_index(b) - self.s0_index

    def time_index(self, t: float) -> int:
        m = int(round(t / self.dt))
        if abs(m * self.dt - t) > 1e-9 * max(1.0, t):
            raise GridError(f"time {t} is not a grid node")
        return m


def build_forward_grid(spot: float, b_max: float, t_max: float, target_dk: float,
                       target_dt: float, floor: float | None = None) -> ForwardGrid:
    """Largest decimal step <= ``target_dk`` dividing both ``S0`` and ``B_Max - S0``.

    Candidate steps are ``g / k`` with ``g`` the common divisor of the two
    lengths and ``k = 2^a 5^b``, so that decimal strike and barrier quotes land
    on nodes.
    """
    if not (b_max > spot > 0.0):
        raise ConfigurationError("need B_Max > S0 > 0")
    if not (target_dk > 0.0 and target_dt > 0.0 and t_max > 0.0):
        raise ConfigurationError("steps and horizon must be positive")
    floor = 1e-6 * spot if floor is None else floor
    s0 = _decimal(spot)
    width = _decimal(b_max) - s0
    g = _fraction_gcd(s0, width)
    k = max(1, math.ceil(g / _decimal(target_dk)))
    while not _is_decimal_divisor(k):
        k += 1
    step = g / k
    if float(step) < floor:
        raise ConfigurationError(f"no admissible strike step above {floor:g} for S0={spot}, B_Max={b_max}")
    n_time = max(1, _ceil(t_max / target_dt))
    return ForwardGrid(
        spot=float(spot),
        dk=float(step),
        dt=t_max / n_time,
        s0_index=int(s0 / step),
        n_barrier=int(width / step),
        n_time=n_time,
        t_max=float(t_max),
    )


def grading_map(z, spot: float, barrier: float, lam: float = GRADING_LAMBDA):
    """Exponential grading of ``[S0, B]``, clustered at ``S0``."""
    theta = (barrier - spot) / math.expm1(lam)
    return (spot - theta) + theta * np.exp(lam * np.asarray(z, dtype=float))


@dataclass(frozen=True)
class BackwardGrid:
    """Running-maximum levels ``y_0 = S0 < ... < y_{N_y} < y_{N_y+1} = B``.

    ``below`` is the grading map extended one index below ``S0``; it only
    serves as a spot node of the first layer.
    """

    spot: float
    barrier: float
    dy: float
    levels: np.ndarray
    below: float

    @property
    def n_y(self) -> int:
        return len(self.levels) - 2

    def level(self, i: int) -> float:
        return self.below if i == -1 else float(self.levels[i])


def build_backward_ygrid(spot: float, barrier: float, dy: float) -> BackwardGrid:
    if not barrier > spot:
        raise ConfigurationError("backward y-grid needs B > S0")
    if not dy > 0.0:
        raise ConfigurationError("dy must be positive")
    n_y = max(1, _ceil((barrier - spot) / dy))
    z = np.arange(n_y + 1) / (n_y + 1)
    levels = np.empty(n_y + 2)
    levels[:-1] = grading_map(z, spot, barrier)
    levels[0] = spot
    levels[-1] = barrier
    below = float(grading_map(-1.0 / (n_y + 1), spot, barrier))
    return BackwardGrid(float(spot), float(barrier), float(dy), levels, below)


def build_layer_xgrid(y_i: float, y_im1: float, y_im2: float, dy: float) -> np.ndarray:
    """Spot nodes on ``[0, y_i]`` with the top three pinned to ``y_{i-2}, y_{i-1}, y_i``."""
    if not (y_im2 < y_im1 < y_i):
        raise GridError("layer levels must be strictly increasing")
    n_x = _ceil(y_i / dy)
    if n_x < 4:
        raise GridError(f"layer grid too coarse: N_x={n_x}")
    dx = y_im2 / (n_x - 2)
    x = np.empty(n_x + 1)
    x[: n_x - 2] = np.arange(n_x - 2) * dx
    x[n_x - 2] = y_im2
    x[n_x - 1] = y_im1
    x[n_x] = y_i
    return x
