"""Forward Volterra-type PIDE for capitalized up-and-out call prices.

The unknown ``u[m, j, i] = C~(K_i, B_j, T_m)`` is solved layer by layer in the
barrier. Inside a layer the strike equation is

    u_T + mu K u_K - 1/2 (sigma^2 - 1/2 dsigma^2/dB dB) K^2 u_KK
        - 1/2 sigma^2(B, B) B^2 (B - K) u_KKK(B) = f,

where ``f`` is the trapezoid sum over the layers below and the third
derivative at ``K = B`` is approximated by a four-point one-sided stencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

from . import kernels
from .errors import ConfigurationError, DomainError, GridError, NumericalFailure, SequencingError
from .mesh import ForwardGrid
from .model import MarketParams, VolSurface

log = logging.getLogger(__name__)

PHI_STENCIL = np.array([-1.0, 3.0, -3.0, 1.0])
# u vanishes to third order at K = B, so u(B - dK) = -u_KKK dK^3 / 6 + O(dK^4)
CUBIC_STENCIL = np.array([0.0, 0.0, -6.0, 0.0])
BOUNDARY_STENCILS = {"phi": PHI_STENCIL, "cubic": CUBIC_STENCIL}
_STORE_ALL_LIMIT = 256 * 2**20


# --------------------------------------------------------------------------- operators

def assemble_operators(n: int, dk: float):
    """First, second and boundary third difference matrices of size ``n``.

    Returns sparse ``(D, D2, Phi)``. ``D`` is central with one-sided edge
    rows, ``D2`` repeats the interior stencil on the edge rows and every row
    of ``Phi`` holds ``(-1, 3, -3, 1) / dk^3`` on the last four columns.
    """
    if n < 5:
        raise GridError(f"layer needs at least 5 strike nodes, got {n}")
    i = np.arange(1, n - 1)
    d = sparse.lil_matrix((n, n))
    d[i, i - 1] = -0.5
    d[i, i + 1] = 0.5
    d[0, 0], d[0, 1] = -1.0, 1.0
    d[n - 1, n - 2], d[n - 1, n - 1] = -1.0, 1.0
    d2 = sparse.lil_matrix((n, n))
    d2[i, i - 1] = 1.0
    d2[i, i] = -2.0
    d2[i, i + 1] = 1.0
    d2[0, 0:3] = [1.0, -2.0, 1.0]
    d2[n - 1, n - 3:n] = [1.0, -2.0, 1.0]
    phi = np.zeros((n, n))
    phi[:, n - 4:] = PHI_STENCIL
    return (sparse.csr_matrix(d) / dk, sparse.csr_matrix(d2) / dk**2, sparse.csr_matrix(phi) / dk**3)


@dataclass(frozen=True)
class BandedDense:
    """Tridiagonal matrix plus a dense block on its last four columns.

    ``sub[i]`` multiplies ``x[i-1]``, ``sup[i]`` multiplies ``x[i+1]`` and
    ``dense[i, c]`` multiplies ``x[n-4+c]``. Band and dense entries that hit
    the same position are added.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    dense: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def to_dense(self) -> np.ndarray:
        n = self.n
        a = np.diag(self.diag) + np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)
        a[:, n - 4:] += self.dense
        return a

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.diag * x + self.dense @ x[self.n - 4:]
        y[1:] += self.sub[1:] * x[:-1]
        y[:-1] += self.sup[:-1] * x[1:]
        return y

    @classmethod
    def from_dense(cls, a) -> "BandedDense":
        """Split a dense matrix, checking that it has the required sparsity."""
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n) or n < 5:
            raise GridError("need a square matrix with at least 5 rows")
        k = n - 4
        band = np.zeros_like(a)
        idx = np.arange(n)
        band[idx, idx] = 1.0
        band[idx[1:], idx[:-1]] = 1.0
        band[idx[:-1], idx[1:]] = 1.0
        band[:, k:] = 1.0
        if np.any((band == 0.0) & (a != 0.0)):
            raise GridError("matrix is not tridiagonal plus four dense trailing columns")
        dense = a[:, k:].copy()
        sub = np.zeros(n)
        sup = np.zeros(n)
        diag = np.zeros(n)
        for r in range(n):
            for c_, arr in ((r - 1, sub), (r, diag), (r + 1, sup)):
                if 0 <= c_ < n and c_ < k:
                    arr[r] = a[r, c_]
        return cls(sub, diag, sup, dense)


def solve_banded_plus_dense(system: BandedDense, rhs) -> np.ndarray:
    """O(n) elimination for a :class:`BandedDense` system."""
    x, code = kernels.solve_banded_dense(
        np.ascontiguousarray(system.sub, dtype=float),
        np.ascontiguousarray(system.diag, dtype=float),
        np.ascontiguousarray(system.sup, dtype=float),
        np.ascontiguousarray(system.dense, dtype=float),
        np.ascontiguousarray(rhs, dtype=float),
    )
    if code != 0:
        raise NumericalFailure("zero pivot in banded-plus-dense elimination", step=code - 1)
    return x


# --------------------------------------------------------------------------- layer system

@dataclass(frozen=True)
class LayerSystem:
    """Discrete operator ``L = A D + B D2 + C Phi`` of one barrier layer.

    ``a``, ``b`` and ``c`` are the diagonals of ``A`` (convection), ``B``
    (diffusion) and ``C`` (boundary-derivative weights).
    """

    dk: float
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    stencil: np.ndarray = field(default_factory=lambda: PHI_STENCIL.copy())

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def to_sparse(self):
        d, d2, _ = assemble_operators(self.n, self.dk)
        phi = np.zeros((self.n, self.n))
        phi[:, self.n - 4:] = self.stencil / self.dk**3
        return sparse.diags(self.a) @ d + sparse.diags(self.b) @ d2 + sparse.diags(self.c) @ sparse.csr_matrix(phi)

    def apply(self, u) -> np.ndarray:
        return self.to_sparse() @ np.asarray(u, dtype=float)

    def shifted(self, scale: float) -> BandedDense:
        """``I + scale * L`` in banded-plus-dense form."""
        n, h = self.n, self.dk
        sub = np.zeros(n)
        diag = np.ones(n)
        sup = np.zeros(n)
        a, b = self.a, self.b
        i = np.arange(1, n - 1)
        sub[i] = scale * (-0.5 * a[i] / h + b[i] / h**2)
        diag[i] += scale * (-2.0 * b[i] / h**2)
        sup[i] = scale * (0.5 * a[i] / h + b[i] / h**2)
        if b[0] != 0.0:
            raise GridError("K=0 row must have a vanishing diffusion coefficient")
        diag[0] += scale * (-a[0] / h)
        sup[0] = scale * (a[0] / h)
        dense = np.zeros((n, 4))
        dense += scale * self.c[:, None] * self.stencil[None, :] / h**3
        # last row: backward D and repeated D2 stencil live in the dense block
        dense[n - 1, 1] += scale * (b[n - 1] / h**2)
        dense[n - 1, 2] += scale * (-a[n - 1] / h - 2.0 * b[n - 1] / h**2)
        dense[n - 1, 3] += scale * (a[n - 1] / h + b[n - 1] / h**2)
        return BandedDense(sub, diag, sup, dense)


def _sigma2_block(surface: VolSurface, x, y, t):
    """``sigma^2`` at strikes ``x`` (zero where ``x == 0``), shape ``(len(t), len(x))``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((len(t), len(x)))
    pos = x > 0.0
    if np.any(pos):
        if surface.separable and len(t) > 1:
            row = surface.sigma2(x[pos], np.asarray(y, dtype=float), 0.0)
            out[:, pos] = np.asarray(surface.time_factor(t))[:, None] * row[None, :]
        else:
            out[:, pos] = surface.sigma2(x[pos][None, :], np.asarray(y, dtype=float), np.asarray(t)[:, None])
    return out


def _dsig_block(surface: VolSurface, x, y, t):
    x = np.asarray(x, dtype=float)
    out = np.zeros((len(t), len(x)))
    pos = x > 0.0
    if np.any(pos) and surface.depends_on_max:
        if surface.separable and len(t) > 1:
            row = surface.dsigma2_dB(x[pos], np.asarray(y, dtype=float), 0.0)
            out[:, pos] = np.asarray(surface.time_factor(t))[:, None] * row[None, :]
        else:
            out[:, pos] = surface.dsigma2_dB(x[pos][None, :], np.asarray(y, dtype=float), np.asarray(t)[:, None])
    return out


def layer_coefficients(j: int, times, grid: ForwardGrid, surface: VolSurface, market: MarketParams,
                       b_correction: str = "explicit", coeff_times=None):
    """Diagonals ``(a, b, c)`` of layer ``j`` at each of ``times``.

    ``b`` and ``c`` have one row per time, or a single row when the surface
    is time independent; ``coeff_times`` overrides the times they are
    evaluated at. ``a`` is returned per time as the drift ``mu(t)``;
    multiply by ``K`` for the convection diagonal.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = grid.layer_size(j)
    K = grid.strikes[:n]
    bj = K[n - 1]
    tt = times if surface.time_dependent else times[:1]
    if coeff_times is not None:
        tt = np.atleast_1d(np.asarray(coeff_times, dtype=float))
    inner = K[: n - 1]
    b = np.zeros((len(tt), n))
    if b_correction == "explicit":
        s2 = _sigma2_block(surface, inner, bj, tt)
        ds = _dsig_block(surface, inner, bj, tt)
        b[:, : n - 1] = -0.5 * (s2 - 0.5 * ds * grid.db) * inner**2
    elif b_correction == "taylor":
        s2 = _sigma2_block(surface, inner, bj - 0.5 * grid.db, tt)
        b[:, : n - 1] = -0.5 * s2 * inner**2
    else:
        raise ConfigurationError(f"unknown diffusion correction {b_correction!r}")
    sbb = np.asarray(surface.sigma2(bj, bj, tt), dtype=float).reshape(-1, 1)
    c = -0.5 * sbb * bj**2 * np.maximum(bj - K, 0.0)[None, :]
    mu = np.asarray(market.drift(times), dtype=float).reshape(-1)
    return mu, b, c


def build_layer_system(j: int, m: int, grid: ForwardGrid, surface: VolSurface, market: MarketParams,
                       b_correction: str = "explicit", stencil: str = "phi") -> LayerSystem:
    """Layer operator at time node ``T_m`` (Dirichlet row not yet applied)."""
    t = grid.times[m]
    mu, b, c = layer_coefficients(j, [t], grid, surface, market, b_correction)
    K = grid.strikes[: grid.layer_size(j)]
    return LayerSystem(grid.dk, mu[0] * K, b[0], c[0], _stencil(stencil))


def _stencil(name: str) -> np.ndarray:
    try:
        return BOUNDARY_STENCILS[name].copy()
    except KeyError:
        raise ConfigurationError(f"unknown boundary stencil {name!r}") from None


def source_vector(j: int, m: int, layers, surface: VolSurface, grid: ForwardGrid) -> np.ndarray:
    """Trapezoid source ``f_i = -sum_{n=1}^{j-1} 1/2 K_i^2 dKK u_{i,n} dsigma^2/dB(K_i, B_n) dB``.

    ``layers[n]`` holds layer ``n`` at time ``T_m`` (at least ``n_n`` values,
    the rest ignored); layers ``0 .. j-1`` must be present.
    """
    size = grid.layer_size(j)
    f = np.zeros(size)
    if j <= 1:
        return f
    if len(layers) < j:
        raise SequencingError(f"source for layer {j} needs layers 0..{j - 1}, got {len(layers)}")
    K = grid.strikes
    t = grid.times[m]
    for n_ in range(1, j):
        nn = grid.layer_size(n_)
        u = np.asarray(layers[n_], dtype=float)[:nn]
        i = np.arange(1, nn - 1)
        d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / grid.dk**2
        ds = _dsig_block(surface, K[i], K[nn - 1], [t])[0]
        f[i] -= 0.5 * K[i] ** 2 * d2 * ds * grid.db
    return f


def _as_banded(L, n):
    if isinstance(L, LayerSystem):
        return L
    return np.asarray(L.toarray() if sparse.issparse(L) else L, dtype=float).reshape(n, n)


def theta_step(u, L_old, L_new, f_old, f_new, theta: float, dt: float, dirichlet: bool = True) -> np.ndarray:
    """One theta step of ``u_T + L u = f``.

    ``L_old``/``L_new`` are :class:`LayerSystem` objects or matrices. With
    ``dirichlet`` the last row is replaced by ``u_{n-1} = 0``.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError("theta must lie in [0, 1]")
    lo = _as_banded(L_old, n)
    ln = _as_banded(L_new, n)
    lu = lo.apply(u) if isinstance(lo, LayerSystem) else lo @ u
    rhs = u - (1.0 - theta) * dt * lu + dt * (theta * np.asarray(f_new, float) + (1.0 - theta) * np.asarray(f_old, float))
    if isinstance(ln, LayerSystem):
        sysm = ln.shifted(theta * dt)
        if dirichlet:
            sub, diag, sup, dense = sysm.sub.copy(), sysm.diag.copy(), sysm.sup.copy(), sysm.dense.copy()
            sub[n - 1] = sup[n - 1] = 0.0
            dense[n - 1] = 0.0
            diag[n - 1] = 1.0
            sysm = BandedDense(sub, diag, sup, dense)
            rhs[n - 1] = 0.0
        return solve_banded_plus_dense(sysm, rhs)
    a = np.eye(n) + theta * dt * ln
    if dirichlet:
        a[n - 1] = 0.0
        a[n - 1, n - 1] = 1.0
        rhs[n - 1] = 0.0
    try:
        out = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular theta-step matrix") from exc
    return out


# --------------------------------------------------------------------------- time schedule

@dataclass(frozen=True)
class TimeSchedule:
    """Stepping times including the optional implicit half steps at the start."""

    times: np.ndarray
    dts: np.ndarray
    thetas: np.ndarray
    regular: np.ndarray  # schedule index of each grid time node T_m


def time_schedule(grid_times, theta: float, rannacher_steps: int = 2) -> TimeSchedule:
    """Theta schedule on ``grid_times``; the first interval is optionally split
    into ``rannacher_steps`` implicit Euler sub-steps."""
    t = np.asarray(grid_times, dtype=float)
    theta = float(theta)
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError("theta must lie in [0, 1]")
    if rannacher_steps < 0:
        raise ConfigurationError("rannacher_steps must be nonnegative")
    if rannacher_steps <= 1 or theta == 1.0 or len(t) < 2:
        dts = np.diff(t)
        th = np.full(len(dts), theta)
        if rannacher_steps == 1 and len(dts):
            th[0] = 1.0
        return TimeSchedule(t, dts, th, np.arange(len(t)))
    sub = t[0] + (t[1] - t[0]) * np.arange(rannacher_steps) / rannacher_steps
    times = np.concatenate([sub, t[1:]])
    dts = np.diff(times)
    th = np.full(len(dts), theta)
    th[:rannacher_steps] = 1.0
    regular = np.concatenate([[0], np.arange(1, len(t)) + rannacher_steps - 1])
    return TimeSchedule(times, dts, th, regular)


# --------------------------------------------------------------------------- cube

@dataclass(frozen=True)
class PriceCube:
    """Capitalized prices ``C~`` on the grid, stored at a subset of time nodes.

    ``values[k, j, i]`` is ``C~(K_i, B_j, T)`` at ``T = times[k]``; entries with
    ``K_i >= B_j`` are zero.
    """

    grid: ForwardGrid
    market: MarketParams
    time_index: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[self.time_index]

    @property
    def strikes(self) -> np.ndarray:
        return self.grid.strikes

    @property
    def barriers(self) -> np.ndarray:
        return self.grid.barriers

    def slice_index(self, t: float) -> int:
        m = self.grid.time_index(t)
        hits = np.flatnonzero(self.time_index == m)
        if not len(hits):
            raise DomainError(f"time {t} is not a stored slice")
        return int(hits[0])

    def capitalized(self, t: float) -> np.ndarray:
        """``C~`` at stored time ``t`` as a (barrier, strike) array."""
        return self.values[self.slice_index(t)]

    def discounted(self, t: float) -> np.ndarray:
        """Market prices ``C = C~ / Q(T)`` at stored time ``t``."""
        return self.capitalized(t) / self.market.capitalization(t)

    def ladder(self, barrier: float, t: float):
        """Strikes ``0 .. B`` and discounted prices on one barrier layer."""
        j = self.grid.barrier_index(barrier)
        n = self.grid.layer_size(j)
        return self.strikes[:n].copy(), self.discounted(t)[j, :n].copy()


def price_lookup(cube: PriceCube, K: float, B: float, T: float) -> float:
    """Discounted price by trilinear interpolation of ``C~``; exact at nodes."""
    g = cube.grid
    t_stored = cube.times
    if not (0.0 <= K <= g.b_max and g.spot <= B <= g.b_max and t_stored[0] <= T <= t_stored[-1]):
        raise DomainError(f"query (K={K}, B={B}, T={T}) outside the cube hull")
    if K >= B:
        return 0.0

    def bracket(x, nodes):
        k = int(np.searchsorted(nodes, x, side="right")) - 1
        k = min(max(k, 0), len(nodes) - 2) if len(nodes) > 1 else 0
        if len(nodes) == 1:
            return 0, 0, 0.0
        w = (x - nodes[k]) / (nodes[k + 1] - nodes[k])
        if abs(w) < 1e-12:
            w = 0.0
        if abs(w - 1.0) < 1e-12:
            return k + 1, k + 1, 0.0
        return k, k + 1, w

    i0, i1, wi = bracket(K, g.strikes)
    j0, j1, wj = bracket(B - g.spot, g.barriers - g.spot)
    k0, k1, wk = bracket(T, t_stored)
    v = cube.values
    out = 0.0
    for kk, wt in ((k0, 1.0 - wk), (k1, wk)):
        if wt == 0.0:
            continue
        for jj, wb in ((j0, 1.0 - wj), (j1, wj)):
            if wb == 0.0:
                continue
            for ii, wk_ in ((i0, 1.0 - wi), (i1, wi)):
                if wk_ == 0.0:
                    continue
                out += wt * wb * wk_ * v[kk, jj, ii]
    return float(out / cube.market.capitalization(T))


# --------------------------------------------------------------------------- solver

@dataclass(frozen=True)
class ForwardOptions:
    """Solver knobs.

    ``boundary_term`` selects a finite-difference stencil for the third
    derivative at ``K = B`` (``"stencil"``) or the density-based boundary
    derivative (``"density"``, needs ``boundary_density``: a callable
    ``(B, t_array) -> phi(B, B, t)``). ``stencil`` picks the four-point
    third difference (``"phi"``) or the closure ``-6 u(B - dK) / dK^3`` that
    uses the cubic vanishing of the price at ``K = B`` (``"cubic"``).

    ``kink_guard`` switches the lowest ``kink_guard`` layers to the cubic
    closure: there the payoff kink at ``K = S0`` falls inside the four-point
    window and the third difference of the initial data has the wrong sign.
    """

    theta: float = 0.5
    rannacher_steps: int = 2
    b_correction: str = "explicit"
    boundary_term: str = "stencil"
    stencil: str = "phi"
    kink_guard: int = 1
    boundary_density: Optional[Callable] = field(default=None, compare=False)
    store_times: Optional[Sequence[float]] = None


def _store_indices(grid: ForwardGrid, store_times) -> np.ndarray:
    if store_times is None:
        nbytes = (grid.n_time + 1) * (grid.n_barrier + 1) * (grid.n_strike + 1) * 8
        if nbytes <= _STORE_ALL_LIMIT:
            return np.arange(grid.n_time + 1)
        log.info("cube too large to store every slice (%.1f GB); keeping the final slice", nbytes / 2**30)
        return np.array([grid.n_time])
    if isinstance(store_times, str) and store_times == "all":
        return np.arange(grid.n_time + 1)
    idx = sorted({grid.time_index(float(t)) for t in store_times})
    return np.array(idx, dtype=int)


def solve_all(grid: ForwardGrid, surface: VolSurface, market: MarketParams, theta: float = 0.5,
              options: Optional[ForwardOptions] = None, progress: Optional[Callable[[int, int], None]] = None) -> PriceCube:
    """Solve every barrier layer ``B_0 .. B_P`` for all grid times."""
    opts = options or ForwardOptions(theta=theta)
    if options is not None and theta != 0.5 and theta != options.theta:
        raise ConfigurationError("theta given both directly and in options")
    if grid.layer_size(1) < 5:
        raise GridError("strike grid too coarse: fewer than 5 nodes below S0 + dB")
    if opts.boundary_term not in ("stencil", "density"):
        raise ConfigurationError(f"unknown boundary term {opts.boundary_term!r}")
    if opts.boundary_term == "density" and opts.boundary_density is None:
        raise ConfigurationError("density boundary term needs a boundary_density callable")
    sched = time_schedule(grid.times, opts.theta, opts.rannacher_steps)
    nt = len(sched.times)
    nk = grid.n_strike + 1
    K = grid.strikes
    store = _store_indices(grid, opts.store_times)
    store_sched = sched.regular[store]
    values = np.zeros((len(store), grid.n_barrier + 1, nk))
    F = np.zeros((nt, nk))
    buf = np.empty(nt * nk)
    use_phi = 1 if opts.boundary_term == "stencil" else 0
    phi_w = _stencil(opts.stencil)
    guard_w = _stencil("cubic")
    if opts.kink_guard < 0:
        raise ConfigurationError("kink_guard must be nonnegative")
    # separable surfaces pass one coefficient row and a per-step variance scale
    if surface.time_dependent and surface.separable:
        tt = sched.times[:1]
        tscale = np.ascontiguousarray(surface.time_factor(sched.times) / surface.time_factor(sched.times[0]),
                                      dtype=float)
    else:
        tt = sched.times if surface.time_dependent else sched.times[:1]
        tscale = np.ones(nt)
    q_t = np.asarray(market.capitalization(sched.times), dtype=float)
    d_t = np.asarray(market.discount(sched.times), dtype=float)
    for j in range(1, grid.n_barrier + 1):
        n = grid.layer_size(j)
        bj = K[n - 1]
        mu, b, c = layer_coefficients(j, sched.times, grid, surface, market, opts.b_correction, coeff_times=tt)
        U = buf[: nt * n].reshape(nt, n)
        U[0] = np.maximum(grid.spot - K[:n], 0.0)
        U[0, n - 1] = 0.0
        if use_phi:
            psi = np.zeros(nt)
        else:
            phi_bb = np.asarray(opts.boundary_density(bj, sched.times), dtype=float)
            psi = -d_t * q_t * phi_bb
        code = kernels.forward_layer_march(
            np.ascontiguousarray(K[:n]), np.ascontiguousarray(mu), np.ascontiguousarray(b),
            np.ascontiguousarray(c), tscale, F, psi, use_phi, guard_w if j <= opts.kink_guard else phi_w, sched.dts, sched.thetas, grid.dk, U)
        if code != 0:
            raise NumericalFailure("forward layer solve broke down", layer=j, step=-code - 1)
        if not np.all(np.isfinite(U[-1])):
            raise NumericalFailure("non-finite values in forward layer", layer=j)
        values[:, j, :n] = U[store_sched]
        if j < grid.n_barrier and surface.depends_on_max:
            ds = _dsig_block(surface, K[:n], bj, tt)
            kernels.accumulate_source(F, U, np.ascontiguousarray(K[:n]), np.ascontiguousarray(ds), tscale, grid.dk)
        if progress is not None:
            progress(j, grid.n_barrier)
    meta = {
        "theta": opts.theta,
        "rannacher_steps": opts.rannacher_steps,
        "b_correction": opts.b_correction,
        "boundary_term": opts.boundary_term,
        "stencil": opts.stencil,
        "kink_guard": opts.kink_guard,
        "backend": kernels.BACKEND,
    }
    return PriceCube(grid, market, store, values, meta)


def solve_layers_reference(grid: ForwardGrid, surface: VolSurface, market: MarketParams, theta: float = 0.5,
                           n_layers: Optional[int] = None, b_correction: str = "explicit",
                           stencil: str = "phi") -> np.ndarray:
    """Slow matrix-level solver built from :func:`theta_step` and :func:`source_vector`.

    Plain theta stepping without start-up sub-steps. Returns the full
    ``(M+1, P'+1, N+1)`` array for the first ``n_layers`` layers.
    """
    p = grid.n_barrier if n_layers is None else n_layers
    nk = grid.n_strike + 1
    out = np.zeros((grid.n_time + 1, p + 1, nk))
    K = grid.strikes
    for j in range(1, p + 1):
        n = grid.layer_size(j)
        u = np.maximum(grid.spot - K[:n], 0.0)
        u[n - 1] = 0.0
        out[0, j, :n] = u
        L_old = build_layer_system(j, 0, grid, surface, market, b_correction, stencil)
        f_old = source_vector(j, 0, out[0], surface, grid)
        for m in range(grid.n_time):
            L_new = build_layer_system(j, m + 1, grid, surface, market, b_correction, stencil)
            f_new = source_vector(j, m + 1, out[m + 1], surface, grid)
            u = theta_step(u, L_old, L_new, f_old, f_new, theta, grid.times[m + 1] - grid.times[m])
            out[m + 1, j, :n] = u
            L_old, f_old = L_new, f_new
    return out


def constant_vol_surface_check(cube: PriceCube, vol: float, t: float, npv_floor: float = 1.0):
    """Mixed-metric error of a constant-vol cube slice against the closed form."""
    from .analytic import up_out_call
    from .metrics import mixed_error

    m = cube.market
    if not (m.rate.is_flat and m.dividend.is_flat):
        raise ConfigurationError("closed form needs flat rates")
    r, q = m.rate.rates[0], m.dividend.rates[0]
    disc = cube.discounted(t)
    errs = []
    for j, b in enumerate(cube.barriers):
        if j == 0:
            continue
        n = cube.grid.layer_size(j)
        ref = up_out_call(cube.grid.spot, cube.strikes[:n], b, t, r, q, vol)
        errs.append(mixed_error(disc[j, :n], ref, npv_floor))
    return np.concatenate(errs) if errs else np.zeros(0)


def capitalized_bound(market: MarketParams, t) -> float:
    """Upper bound of the capitalized price.

    ``C <= D(T) E[S_T] = S0 / Q(T)``, so ``C~ = Q(T) C <= S0`` at every ``T``.
    """
    return float(market.spot)


def coarsen(grid: ForwardGrid) -> ForwardGrid:
    """Grid with twice the strike/barrier step and the same time nodes."""
    if grid.s0_index % 2 or grid.n_barrier % 2:
        raise GridError("strike grid cannot be coarsened: S0/dK or (B_Max - S0)/dK is odd")
    return ForwardGrid(grid.spot, 2.0 * grid.dk, grid.dt, grid.s0_index // 2, grid.n_barrier // 2,
                       grid.n_time, grid.t_max)


def solve_extrapolated(grid: ForwardGrid, surface: VolSurface, market: MarketParams,
                       options: Optional[ForwardOptions] = None) -> PriceCube:
    """Richardson combination ``2 u(dK) - u(2 dK)`` of two stencil solves.

    The boundary stencil makes the scheme first order in ``dK``; the
    combination removes that term. The result lives on the coarse grid.
    The fine solve guards twice as many layers so both guards cover the
    same barrier range.
    """
    opts = options or ForwardOptions()
    coarse = coarsen(grid)
    fine_opts = replace(opts, kink_guard=2 * opts.kink_guard)
    fine_cube = solve_all(grid, surface, market, options=fine_opts)
    coarse_cube = solve_all(coarse, surface, market, options=opts)
    values = 2.0 * fine_cube.values[:, ::2, ::2] - coarse_cube.values
    meta = dict(coarse_cube.meta, extrapolated=True, fine_dk=grid.dk)
    return PriceCube(coarse, market, coarse_cube.time_index, values, meta)
