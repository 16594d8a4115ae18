"""Monte-Carlo simulation of the mimicking diffusion with its running maximum.

Paths follow log-Euler steps of ``dS/S = mu dt + sigma(S, M, t) dW``. In
``"bridge"`` mode continuous monitoring is recovered per step from the
Brownian-bridge crossing probability with the step-local volatility; in
``"discrete"`` mode only the step end points are monitored.

Paths are generated in fixed-size chunks, each with its own child of a
``numpy.random.SeedSequence``, so a given configuration and seed yields the
same estimate bitwise whatever the chunk evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .model import MarketParams, VolSurface

MC_MODES = ("bridge", "discrete")


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    steps_per_year: int = 512
    seed: int = 0
    antithetic: bool = True
    mode: str = "bridge"
    chunk_size: int = 1 << 16

    def __post_init__(self):
        if self.paths < 1 or self.steps_per_year < 1 or self.chunk_size < 2:
            raise ConfigurationError("paths, steps_per_year must be >= 1 and chunk_size >= 2")
        if self.mode not in MC_MODES:
            raise ConfigurationError(f"mode must be one of {MC_MODES}")
        if self.antithetic and (self.paths % 2 or self.chunk_size % 2):
            raise ConfigurationError("antithetic sampling needs even paths and chunk_size")

    def n_steps(self, T: float) -> int:
        return max(1, int(math.ceil(self.steps_per_year * T - 1e-9)))

    def chunks(self):
        """Sizes of the path chunks, in order."""
        full, rest = divmod(self.paths, self.chunk_size)
        return [self.chunk_size] * full + ([rest] if rest else [])


@dataclass(frozen=True)
class McResult:
    estimate: float
    stderr: float
    paths: int
    steps: int

    def __iter__(self):
        return iter((self.estimate, self.stderr))


def _vol(surface: VolSurface, s, m, t):
    if surface.kind == "constant":
        return surface.constant_vol
    return surface._sigma_raw(s, m, np.asarray(t, dtype=float))


def _normals(rng: np.random.Generator, n: int, antithetic: bool) -> np.ndarray:
    if antithetic:
        z = rng.standard_normal(n // 2)
        return np.concatenate([z, -z])
    return rng.standard_normal(n)


def _simulate_chunk(n: int, rng, surface, market, T, n_steps, antithetic, mode, barrier=None, sample=False):
    """One chunk of paths; returns ``(S_T, M_T, survival weight)``.

    With ``sample`` the bridge maximum is drawn per step instead of weighting.
    """
    dt = T / n_steps
    sq = math.sqrt(dt)
    s0 = market.spot
    logs = np.full(n, math.log(s0))
    logm = logs.copy()
    weight = np.ones(n)
    logb = math.log(barrier) if barrier is not None else None
    times = np.arange(n_steps) * dt
    drift = np.asarray(market.drift(times + 0.5 * dt), dtype=float).reshape(-1)
    for i in range(n_steps):
        s = np.exp(logs)
        m = np.exp(logm)
        vol = _vol(surface, s, m, times[i])
        z = _normals(rng, n, antithetic)
        new = logs + (drift[i] - 0.5 * vol * vol) * dt + vol * sq * z
        if mode == "bridge":
            var = vol * vol * dt
            if sample:
                u = rng.random(n)
                bmax = 0.5 * (logs + new + np.sqrt((new - logs) ** 2 - 2.0 * var * np.log1p(-u)))
                logm = np.maximum(logm, bmax)
            else:
                logm = np.maximum(logm, new)
                if logb is not None:
                    d0 = np.maximum(logb - logs, 0.0)
                    d1 = np.maximum(logb - new, 0.0)
                    weight *= -np.expm1(-2.0 * d0 * d1 / var)
        else:
            logm = np.maximum(logm, new)
        logs = new
        if logb is not None and not sample:
            weight[logm >= logb] = 0.0
    return np.exp(logs), np.exp(logm), weight


def simulate_price(deal, surface: VolSurface, market: MarketParams, cfg: McConfig) -> McResult:
    """Estimate ``D(T) E[(S_T - K)^+ 1{M_T < B}]`` with its standard error.

    ``deal`` needs ``strike``, ``barrier`` and ``maturity`` attributes. With
    antithetics the standard error is computed from pair averages.
    """
    K, B, T = float(deal.strike), float(deal.barrier), float(deal.maturity)
    n_steps = cfg.n_steps(T)
    if B <= market.spot or K >= B:
        return McResult(0.0, 0.0, cfg.paths, n_steps)
    disc = float(market.discount(T))
    children = np.random.SeedSequence(cfg.seed).spawn(len(cfg.chunks()))
    total, total_sq, count = 0.0, 0.0, 0
    for size, child in zip(cfg.chunks(), children):
        rng = np.random.Generator(np.random.PCG64(child))
        sT, _, w = _simulate_chunk(size, rng, surface, market, T, n_steps, cfg.antithetic, cfg.mode, barrier=B)
        pay = disc * np.maximum(sT - K, 0.0) * w
        if cfg.antithetic:
            h = size // 2
            pay = 0.5 * (pay[:h] + pay[h:])
        total += float(pay.sum())
        total_sq += float(np.dot(pay, pay))
        count += pay.size
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
    return McResult(mean, math.sqrt(var / count), cfg.paths, n_steps)


def simulate_joint_sample(surface: VolSurface, market: MarketParams, cfg: McConfig, T: float):
    """Terminal ``(S_T, M_T)`` pairs; bridge mode draws the continuous maximum per step."""
    n_steps = cfg.n_steps(T)
    children = np.random.SeedSequence(cfg.seed).spawn(len(cfg.chunks()))
    out_s, out_m = [], []
    for size, child in zip(cfg.chunks(), children):
        rng = np.random.Generator(np.random.PCG64(child))
        sT, mT, _ = _simulate_chunk(size, rng, surface, market, T, n_steps, cfg.antithetic, cfg.mode, sample=True)
        out_s.append(sT)
        out_m.append(mT)
    return np.concatenate(out_s), np.concatenate(out_m)


def spot_mean(surface: VolSurface, market: MarketParams, cfg: McConfig, T: float, sample=None):
    """Sample mean of ``S_T`` and its standard error (martingale check)."""
    sT = simulate_joint_sample(surface, market, cfg, T)[0] if sample is None else sample
    return float(sT.mean()), float(sT.std(ddof=1) / math.sqrt(sT.size))


def discrete_vs_bridge(deal, surface, market, cfg: McConfig):
    """Both monitoring modes with common random numbers: ``(discrete, bridge)`` results."""
    a = simulate_price(deal, surface, market, McConfig(**{**cfg.__dict__, "mode": "discrete"}))
    b = simulate_price(deal, surface, market, McConfig(**{**cfg.__dict__, "mode": "bridge"}))
    return a, b


def default_config(seed: Optional[int] = None, **kw) -> McConfig:
    return McConfig(seed=0 if seed is None else int(seed), **kw)
