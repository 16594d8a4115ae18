"""Experiment pipelines shared by the command line and the acceptance suite.

Each function takes a :class:`~fwdbarrier.config.RunConfig` and returns
arrays or result objects; writing files is left to the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import backward_pde, density_kfe, forward_pide, mc_oracle, recovery
from .config import RunConfig
from .errors import ConfigurationError
from .mesh import ForwardGrid, build_forward_grid
from .metrics import empirical_order, mixed_error

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- tolerances

def within_tolerance(values, reference, rel_tol: float, abs_tol: float, npv_floor: float = 1.0) -> np.ndarray:
    """Relative check where the reference exceeds ``npv_floor``, absolute below."""
    v = np.asarray(values, dtype=float)
    ref = np.asarray(reference, dtype=float)
    big = np.abs(ref) > npv_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(v - ref) / np.abs(ref)
    return np.where(big, rel <= rel_tol, np.abs(v - ref) <= abs_tol)


# --------------------------------------------------------------------------- forward

def forward_grid(cfg: RunConfig, dk: Optional[float] = None, dt: Optional[float] = None,
                 t_max: Optional[float] = None) -> ForwardGrid:
    g = cfg.grid
    return build_forward_grid(cfg.market.spot, g.b_max, g.t_max if t_max is None else t_max,
                              g.dk if dk is None else dk, g.dt if dt is None else dt)


def forward_options(cfg: RunConfig, store_times=None, **kw) -> forward_pide.ForwardOptions:
    g = cfg.grid
    base = dict(theta=g.theta, rannacher_steps=g.rannacher_steps, stencil=g.stencil, kink_guard=g.kink_guard,
                store_times=store_times)
    base.update(kw)
    return forward_pide.ForwardOptions(**base)


def run_forward(cfg: RunConfig, store_times=None, dk: Optional[float] = None, dt: Optional[float] = None,
                extrapolate: Optional[bool] = None, t_max: Optional[float] = None,
                **option_kw) -> forward_pide.PriceCube:
    """Forward cube on the configured grid; the extrapolated cube lives on the ``2 dk`` grid."""
    grid = forward_grid(cfg, dk, dt, t_max)
    opts = forward_options(cfg, store_times, **option_kw)
    extrapolate = cfg.grid.extrapolate if extrapolate is None else extrapolate
    surface, market = cfg.build_surface(), cfg.build_market()
    if extrapolate:
        return forward_pide.solve_extrapolated(grid, surface, market, opts)
    return forward_pide.solve_all(grid, surface, market, options=opts)


def forward_ladder(cube: forward_pide.PriceCube, strikes: Sequence[float], barrier: float,
                   maturity: float) -> np.ndarray:
    """Discounted cube prices at ``(K, B, T)`` for every strike."""
    return np.array([forward_pide.price_lookup(cube, float(k), barrier, maturity) for k in strikes])


# --------------------------------------------------------------------------- backward

def backward_ladder(cfg: RunConfig, strikes: Optional[Sequence[float]] = None, barrier: Optional[float] = None,
                    maturity: Optional[float] = None, dy: Optional[float] = None,
                    n_steps: Optional[int] = None) -> backward_pde.BackwardResult:
    e, b = cfg.experiment, cfg.backward
    strikes = e.strikes if strikes is None else strikes
    return backward_pde.price_ladder(
        np.asarray(strikes, dtype=float), e.barrier if barrier is None else barrier,
        e.maturity if maturity is None else maturity, cfg.build_surface(), cfg.build_market(),
        dy=b.dy if dy is None else dy, n_steps=b.n_steps if n_steps is None else n_steps, theta=cfg.grid.theta,
        top_layer=b.top_layer)


@dataclass(frozen=True)
class PanelComparison:
    strikes: np.ndarray
    barriers: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    metric: np.ndarray
    average: float
    maximum: float
    argmax: tuple


def compare_panel(cfg: RunConfig, cube: forward_pide.PriceCube, dy: Optional[float] = None,
                  n_steps: Optional[int] = None) -> PanelComparison:
    """Mixed-metric difference between the cube and the backward solver on the strike/barrier panel."""
    e = cfg.experiment
    K = np.asarray(e.panel_strikes, dtype=float)
    Bs = np.asarray(e.panel_barriers, dtype=float)
    fwd = np.zeros((len(Bs), len(K)))
    bwd = np.zeros_like(fwd)
    for j, B in enumerate(Bs):
        fwd[j] = forward_ladder(cube, K, float(B), e.maturity)
        res = backward_ladder(cfg, K, float(B), e.maturity, dy=e.panel_dy if dy is None else dy,
                              n_steps=e.panel_steps if n_steps is None else n_steps)
        bwd[j] = res.prices
    metric = mixed_error(fwd, bwd, e.npv_floor)
    idx = np.unravel_index(int(np.argmax(metric)), metric.shape)
    return PanelComparison(K, Bs, fwd, bwd, metric, float(metric.mean()), float(metric.max()),
                           (float(K[idx[1]]), float(Bs[idx[0]])))


# --------------------------------------------------------------------------- recovery

def recovery_store_times(cfg: RunConfig) -> np.ndarray:
    r = cfg.recovery
    n = int(round((cfg.experiment.maturity - r.t_first) / r.t_step))
    if n < 2:
        raise ConfigurationError("recovery needs at least three stored slices")
    return np.round(r.t_first + r.t_step * np.arange(n + 1), 12)


def recovery_run(cfg: RunConfig):
    """``(cube, recovered surface, max relative error on the mask for t >= t_min)``."""
    r = cfg.recovery
    cube = run_forward(cfg, store_times=recovery_store_times(cfg), dk=r.dk, dt=r.dt,
                       t_max=cfg.experiment.maturity)
    rec = recovery.recover_sigma(cube, tau_den=r.tau_den, rel_density=r.rel_density,
                                 barrier_margin=r.barrier_margin)
    err = rec.relative_error(cfg.build_surface(), r.t_min, cfg.experiment.maturity)
    worst = float(err.max()) if err.size else float("nan")
    return cube, rec, worst


# --------------------------------------------------------------------------- density

def density_run(cfg: RunConfig, b_max: Optional[float] = None, store_times=None,
                T: Optional[float] = None) -> density_kfe.DensityGrid:
    d = cfg.density
    T = cfg.experiment.maturity if T is None else T
    return density_kfe.solve_kfe(cfg.build_surface(), cfg.build_market(), d.dx, d.b_max if b_max is None else b_max,
                                 T, n_steps=d.n_steps, theta=cfg.grid.theta, warm_time=d.warm_time,
                                 store_times=store_times)


def density_ladder(cfg: RunConfig, density: density_kfe.DensityGrid, strikes=None, barrier=None,
                   maturity=None) -> np.ndarray:
    e = cfg.experiment
    strikes = e.strikes if strikes is None else strikes
    B = e.barrier if barrier is None else barrier
    T = e.maturity if maturity is None else maturity
    m = cfg.build_market()
    return np.array([density_kfe.price_from_density(density, float(k), B, T, m) for k in strikes])


# --------------------------------------------------------------------------- Monte Carlo

def mc_config(cfg: RunConfig, seed: Optional[int] = None, **kw) -> mc_oracle.McConfig:
    m = cfg.mc
    base = dict(paths=m.paths, steps_per_year=m.steps_per_year, seed=cfg.seed if seed is None else seed,
                antithetic=m.antithetic, mode=m.mode, chunk_size=m.chunk_size)
    base.update(kw)
    return mc_oracle.McConfig(**base)


def mc_ladder(cfg: RunConfig, strikes=None, barrier=None, maturity=None, seed: Optional[int] = None, **kw):
    """One :class:`~fwdbarrier.mc_oracle.McResult` per strike, each with its own seed offset."""
    e = cfg.experiment
    strikes = e.strikes if strikes is None else strikes
    B = e.barrier if barrier is None else barrier
    T = e.maturity if maturity is None else maturity
    surface, market = cfg.build_surface(), cfg.build_market()
    base = cfg.seed if seed is None else seed
    out = []
    for i, k in enumerate(strikes):
        deal = backward_pde.BackwardDeal(float(k), B, T)
        out.append(mc_oracle.simulate_price(deal, surface, market, mc_config(cfg, seed=base + i, **kw)))
    return out


# --------------------------------------------------------------------------- convergence

@dataclass(frozen=True)
class ConvergenceStudy:
    parameter: str
    steps: np.ndarray
    errors: np.ndarray
    orders: np.ndarray


def _ladder_error(values, reference, npv_floor):
    return float(np.max(mixed_error(values, reference, npv_floor)))


def convergence_dk(cfg: RunConfig, steps: Optional[Sequence[float]] = None, dt: float = 0.005) -> ConvergenceStudy:
    """Raw stencil scheme (no extrapolation) against the extrapolated solve at the finest step."""
    e = cfg.experiment
    steps = np.asarray(e.convergence_dk if steps is None else steps, dtype=float)
    T = e.maturity
    ref_cube = run_forward(cfg, store_times=[T], dk=float(steps.min()) / 2.0, dt=dt, extrapolate=True, t_max=T)
    ref = forward_ladder(ref_cube, e.strikes, e.barrier, T)
    errs = []
    for dk in steps:
        cube = run_forward(cfg, store_times=[T], dk=float(dk), dt=dt, extrapolate=False, t_max=T)
        errs.append(_ladder_error(forward_ladder(cube, e.strikes, e.barrier, T), ref, e.npv_floor))
    errs = np.array(errs)
    return ConvergenceStudy("dk", steps, errs, empirical_order(errs, steps[0] / steps[1]))


def convergence_dt(cfg: RunConfig, steps: Optional[Sequence[float]] = None, dk: float = 0.1) -> ConvergenceStudy:
    """Time refinement at fixed strike step against a solve with a quarter of the finest step."""
    e = cfg.experiment
    steps = np.asarray(e.convergence_dt if steps is None else steps, dtype=float)
    T = e.maturity
    ref_cube = run_forward(cfg, store_times=[T], dk=dk, dt=float(steps.min()) / 4.0, extrapolate=False, t_max=T)
    ref = forward_ladder(ref_cube, e.strikes, e.barrier, T)
    errs = []
    for dt in steps:
        cube = run_forward(cfg, store_times=[T], dk=dk, dt=float(dt), extrapolate=False, t_max=T)
        errs.append(_ladder_error(forward_ladder(cube, e.strikes, e.barrier, T), ref, e.npv_floor))
    errs = np.array(errs)
    return ConvergenceStudy("dt", steps, errs, empirical_order(errs, steps[0] / steps[1]))
