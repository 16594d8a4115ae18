"""Closed forms under constant volatility, used as oracles.

With flat ``sigma``, ``r`` and ``q`` the log-spot ``X_t = log(S_t/S0)`` is a
drifted Brownian motion with drift ``nu = r - q - sigma^2/2``, and the law of
``(X_T, max X)`` follows from the reflection principle.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr


def bs_call(spot, strike, t, r, q, vol):
    """Black-Scholes call with continuous dividend yield."""
    spot = np.asarray(spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    fwd_disc = spot * math.exp(-q * t)
    k_disc = strike * math.exp(-r * t)
    sd = vol * math.sqrt(t)
    with np.errstate(divide="ignore"):
        d1 = (np.log(spot / strike) + (r - q + 0.5 * vol * vol) * t) / sd
    out = fwd_disc * ndtr(d1) - k_disc * ndtr(d1 - sd)
    return out if out.ndim else float(out)


def up_out_call(spot, strike, barrier, t, r, q, vol):
    """Continuously monitored up-and-out call, no rebate.

    Standard four-term formula for ``K < B``; zero when ``K >= B`` or
    ``S0 >= B``. ``K = 0`` is handled as the limit (a no-touch on the forward).
    """
    strike = np.asarray(strike, dtype=float)
    if spot >= barrier or t <= 0.0:
        out = np.where((spot < barrier) & (strike < barrier), np.maximum(spot - strike, 0.0), 0.0)
        return out if out.ndim else float(out)
    sd = vol * math.sqrt(t)
    mu = (r - q - 0.5 * vol * vol) / (vol * vol)
    lam = (1.0 + mu) * sd
    a_s = spot * math.exp(-q * t)
    a_k = strike * math.exp(-r * t)
    h_s = barrier / spot
    with np.errstate(divide="ignore"):
        x1 = np.log(spot / strike) / sd + lam
        y1 = np.log(barrier * barrier / (spot * strike)) / sd + lam
    x2 = math.log(spot / barrier) / sd + lam
    y2 = math.log(barrier / spot) / sd + lam
    p_a = a_s * ndtr(x1) - a_k * ndtr(x1 - sd)
    p_b = a_s * ndtr(x2) - a_k * ndtr(x2 - sd)
    refl_s = a_s * h_s ** (2.0 * (mu + 1.0))
    refl_k = a_k * h_s ** (2.0 * mu)
    p_c = refl_s * ndtr(-y1) - refl_k * ndtr(-y1 + sd)
    p_d = refl_s * ndtr(-y2) - refl_k * ndtr(-y2 + sd)
    out = np.where(strike < barrier, np.maximum(p_a - p_b + p_c - p_d, 0.0), 0.0)
    return out if out.ndim else float(out)


def _log_params(t, r, q, vol):
    nu = r - q - 0.5 * vol * vol
    return nu, vol * np.sqrt(np.asarray(t, dtype=float))


def joint_density_log(a, m, t, r, q, vol):
    """Density of ``(X_T, max_{s<=T} X_s)`` at ``a <= m``, ``m >= 0``."""
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    t = np.asarray(t, dtype=float)
    nu, sd = _log_params(t, r, q, vol)
    u = 2.0 * m - a
    dens = (2.0 * u / (vol * vol * t * sd * math.sqrt(2.0 * math.pi))
            * np.exp(nu * a / (vol * vol) - nu * nu * t / (2.0 * vol * vol) - u * u / (2.0 * sd * sd)))
    return np.where((a <= m) & (m >= 0.0), dens, 0.0)


def joint_density(x, y, spot, t, r, q, vol):
    """Density of ``(S_T, M_T)`` at ``0 < x <= y``, ``y >= S0``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.log(x / spot)
        m = np.log(y / spot)
        out = joint_density_log(a, m, t, r, q, vol) / (x * y)
    return np.where((x > 0.0) & (x <= y) & (y >= spot), out, 0.0)


def joint_cdf_log(a, m, t, r, q, vol):
    """``P(X_T <= a, max X <= m)``; for ``a > m`` this is ``P(max X <= m)``."""
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    nu, sd = _log_params(t, r, q, vol)
    a = np.minimum(a, m)
    with np.errstate(over="ignore", invalid="ignore"):
        out = ndtr((a - nu * t) / sd) - np.exp(2.0 * nu * m / (vol * vol)) * ndtr((a - 2.0 * m - nu * t) / sd)
    return np.where(m >= 0.0, np.clip(out, 0.0, 1.0), 0.0)


def lognormal_density(x, spot, t, r, q, vol):
    x = np.asarray(x, dtype=float)
    nu, sd = _log_params(t, r, q, vol)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (np.log(x / spot) - nu * t) / sd
        out = np.exp(-0.5 * z * z) / (x * sd * math.sqrt(2.0 * math.pi))
    return np.where(x > 0.0, out, 0.0)


def no_touch_forward(spot, barrier, t, r, q, vol):
    """``D(T) E[S_T 1{M_T < B}]``, the zero-strike up-and-out call."""
    return up_out_call(spot, 0.0, barrier, t, r, q, vol)
