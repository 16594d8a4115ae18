"""Market conventions and the spot/running-maximum volatility surface."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ParameterError

_DIAG_SLACK = 1e-12


@dataclass(frozen=True)
class RateCurve:
    """Piecewise-constant continuously compounded rate.

    ``rates[i]`` applies on ``[ends[i-1], ends[i])`` with ``ends[-1]`` the end
    of the support (``inf`` for a flat curve). Integrals are accumulated
    segment by segment so that discount factors are reproducible bit for bit.
    """

    rates: tuple
    ends: tuple = (math.inf,)

    def __post_init__(self):
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        ends = tuple(float(e) for e in np.atleast_1d(self.ends))
        if len(rates) != len(ends) or not rates:
            raise ParameterError("rate curve needs one end time per segment")
        if any(e <= s for s, e in zip((0.0,) + ends[:-1], ends)):
            raise ParameterError("rate curve segment ends must be strictly increasing and positive")
        if not all(math.isfinite(r) for r in rates):
            raise ParameterError("rates must be finite")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "ends", ends)

    @classmethod
    def flat(cls, rate: float) -> "RateCurve":
        return cls((float(rate),), (math.inf,))

    @property
    def horizon(self) -> float:
        return self.ends[-1]

    @property
    def is_flat(self) -> bool:
        return len(self.rates) == 1

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise DomainError(f"time outside curve support [0, {self.horizon}]")
        return t

    def rate(self, t):
        """Instantaneous rate, right-continuous at segment ends."""
        t = self._check(t)
        if self.is_flat:
            return np.full_like(t, self.rates[0]) if t.ndim else self.rates[0]
        idx = np.searchsorted(self.ends, t, side="right")
        idx = np.minimum(idx, len(self.rates) - 1)
        out = np.asarray(self.rates)[idx]
        return out if t.ndim else float(out)

    def integral(self, t):
        """Exact value of the integral of the rate over ``[0, t]``."""
        t = self._check(t)
        if self.is_flat:
            out = self.rates[0] * t
            return out if t.ndim else float(out)
        starts = np.array((0.0,) + self.ends[:-1])
        ends = np.array(self.ends)
        rates = np.array(self.rates)
        lengths = np.clip(t[..., None] - starts, 0.0, ends - starts)
        out = (lengths * rates).sum(axis=-1)
        return out if t.ndim else float(out)


def _as_curve(value) -> RateCurve:
    if isinstance(value, RateCurve):
        return value
    return RateCurve.flat(float(value))


@dataclass(frozen=True)
class MarketParams:
    """Spot, risk-free rate and dividend yield."""

    spot: float
    rate: RateCurve = field(default_factory=lambda: RateCurve.flat(0.0))
    dividend: RateCurve = field(default_factory=lambda: RateCurve.flat(0.0))

    def __post_init__(self):
        if not (self.spot > 0.0 and math.isfinite(self.spot)):
            raise ParameterError("spot must be positive")
        object.__setattr__(self, "spot", float(self.spot))
        object.__setattr__(self, "rate", _as_curve(self.rate))
        object.__setattr__(self, "dividend", _as_curve(self.dividend))

    @classmethod
    def flat(cls, spot: float, r: float = 0.0, q: float = 0.0) -> "MarketParams":
        return cls(spot, RateCurve.flat(r), RateCurve.flat(q))

    def discount(self, t):
        """D(t) = exp(-int_0^t r)."""
        return np.exp(-np.asarray(self.rate.integral(t))) if np.ndim(t) else math.exp(-self.rate.integral(t))

    def capitalization(self, t):
        """Q(t) = exp(int_0^t q)."""
        return np.exp(np.asarray(self.dividend.integral(t))) if np.ndim(t) else math.exp(self.dividend.integral(t))

    def drift(self, t):
        """mu(t) = r(t) - q(t)."""
        return self.rate.rate(t) - self.dividend.rate(t)

    def forward(self, t):
        return self.spot / (self.discount(t) * self.capitalization(t))


@dataclass(frozen=True)
class SviParams:
    """Raw SVI total-variance parameters."""

    a: float
    b: float
    rho: float
    m: float
    sigma: float

    def __post_init__(self):
        if self.b < 0.0:
            raise ParameterError("SVI slope b must be nonnegative")
        if not abs(self.rho) < 1.0:
            raise ParameterError("SVI rho must satisfy |rho| < 1")
        if not self.sigma > 0.0:
            raise ParameterError("SVI curvature sigma must be positive")
        if self.min_variance < 0.0:
            raise ParameterError("SVI total variance is negative for some log-moneyness")

    @property
    def min_variance(self) -> float:
        return self.a + self.b * self.sigma * math.sqrt(1.0 - self.rho * self.rho)

    def variance(self, k):
        d = np.asarray(k, dtype=float) - self.m
        return self.a + self.b * (self.rho * d + np.sqrt(d * d + self.sigma * self.sigma))

    def variance_slope(self, k):
        d = np.asarray(k, dtype=float) - self.m
        return self.b * (self.rho + d / np.sqrt(d * d + self.sigma * self.sigma))


REFERENCE_SVI = SviParams(a=0.04, b=0.2, rho=0.0, m=0.0, sigma=0.2)


def svi_vol(k, t, p: SviParams):
    """SVI volatility at log-moneyness ``k``; ``t`` is accepted but unused."""
    del t
    return np.sqrt(p.variance(k))


def svi_implied_vol(k, t, p: SviParams):
    """Implied volatility when the SVI parameters describe total variance at ``t``."""
    return np.sqrt(p.variance(k) / t)


SVI_TIME_MODES = ("flat", "total_variance")


@dataclass(frozen=True)
class VolSurface:
    """Volatility as a function of spot ``x``, running maximum ``y`` and time.

    Three kinds are supported: ``"svi"`` averages an SVI smile evaluated at
    the log-moneyness of spot and of the maximum, ``"constant"`` is flat, and
    ``"custom"`` wraps a user callable ``fn(x, y, t) -> sigma``.

    The SVI smile is read at time argument ``t + 1``. With ``svi_time="flat"``
    the smile is ``sqrt(w(k))`` and ignores time; with ``"total_variance"``
    the SVI formula is total variance and the smile is ``sqrt(w(k) / (t + 1))``.
    """

    kind: str
    spot_ref: float = 100.0
    svi: Optional[SviParams] = None
    constant_vol: Optional[float] = None
    bump: float = 1e-4
    exact_dB: bool = False
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    time_dependent_fn: bool = False
    svi_time: str = "flat"

    def __post_init__(self):
        if self.kind == "svi":
            if self.svi is None:
                raise ParameterError("svi surface needs SviParams")
            if not self.svi.min_variance > 0.0:
                raise ParameterError("svi surface needs strictly positive variance")
        elif self.kind == "constant":
            if self.constant_vol is None or not self.constant_vol > 0.0:
                raise ParameterError("constant surface needs a positive volatility")
        elif self.kind == "custom":
            if self.fn is None:
                raise ParameterError("custom surface needs a callable")
        else:
            raise ParameterError(f"unknown surface kind {self.kind!r}")
        if not self.spot_ref > 0.0:
            raise ParameterError("reference spot must be positive")
        if not self.bump > 0.0:
            raise ParameterError("bump step must be positive")
        if self.svi_time not in SVI_TIME_MODES:
            raise ParameterError(f"unknown SVI time mode {self.svi_time!r}")

    @classmethod
    def from_svi(cls, p: SviParams, spot_ref: float, **kw) -> "VolSurface":
        return cls("svi", spot_ref=spot_ref, svi=p, **kw)

    @classmethod
    def constant(cls, vol: float, spot_ref: float = 100.0) -> "VolSurface":
        return cls("constant", spot_ref=spot_ref, constant_vol=float(vol))

    @classmethod
    def custom(cls, fn, spot_ref: float = 100.0, time_dependent: bool = True, **kw) -> "VolSurface":
        return cls("custom", spot_ref=spot_ref, fn=fn, time_dependent_fn=time_dependent, **kw)

    @property
    def time_dependent(self) -> bool:
        if self.kind == "svi":
            return self.svi_time == "total_variance"
        return self.kind == "custom" and self.time_dependent_fn

    @property
    def separable(self) -> bool:
        """True when ``sigma^2(x, y, t) = time_factor(t) * sigma^2(x, y, 0)``."""
        return self.kind in ("svi", "constant")

    def time_factor(self, t):
        """Variance scale relative to ``t = 0`` for separable surfaces."""
        t = np.asarray(t, dtype=float)
        if self.kind == "svi" and self.svi_time == "total_variance":
            return 1.0 / (t + 1.0)
        return np.ones_like(t)

    def sigma2_rows(self, x, y, times) -> np.ndarray:
        """``sigma^2(x, y, t)`` with one row per time, or a single row when time independent."""
        x = np.asarray(x, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if not self.time_dependent:
            return np.asarray(self.sigma2(x, y, times[0]), dtype=float).reshape(1, -1)
        if self.separable:
            row = np.asarray(self.sigma2(x, y, 0.0), dtype=float).reshape(1, -1)
            return np.asarray(self.time_factor(times))[:, None] * row
        return np.asarray(self.sigma2(x[None, :], y, times[:, None]), dtype=float)

    @property
    def depends_on_max(self) -> bool:
        return self.kind != "constant"

    def _check(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any(x <= 0.0) or np.any(x > y * (1.0 + _DIAG_SLACK)):
            raise DomainError("volatility surface is defined for 0 < x <= y")
        return x, y

    def _smile(self, level, t):
        k = np.log(level / self.spot_ref)
        if self.svi_time == "total_variance":
            return svi_implied_vol(k, t + 1.0, self.svi)
        return svi_vol(k, t + 1.0, self.svi)

    def _sigma_raw(self, x, y, t):
        if self.kind == "svi":
            return 0.5 * (self._smile(x, t) + self._smile(y, t))
        if self.kind == "constant":
            return np.full(np.broadcast(x, y, t).shape, self.constant_vol)
        return np.asarray(self.fn(x, y, t), dtype=float)

    def sigma(self, x, y, t=0.0):
        x, y = self._check(x, y)
        out = self._sigma_raw(x, y, np.asarray(t, dtype=float))
        return out if np.ndim(out) else float(out)

    def sigma2(self, x, y, t=0.0):
        s = self.sigma(x, y, t)
        return s * s

    def dsigma2_dB(self, x, y, t=0.0):
        """Rate of change of sigma^2 with the running maximum."""
        x, y = self._check(x, y)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast(x, y, t).shape
        if self.kind == "constant":
            out = np.zeros(shape)
        elif self.kind == "svi" and self.exact_dB:
            ky = np.log(y / self.spot_ref)
            sx = self._smile(x, t)
            sy = self._smile(y, t)
            scale = 1.0 / (t + 1.0) if self.svi_time == "total_variance" else 1.0
            # d/dy of (sx + sy)^2 / 4 with dsy/dy = scale w'(ky) / (2 sy y)
            out = 0.5 * (sx + sy) * scale * self.svi.variance_slope(ky) / (2.0 * sy * y)
            out = np.broadcast_to(out, shape).copy()
        else:
            out = self._bumped_slope(x, y, t, shape)
        return out if out.ndim else float(out)

    def _bumped_slope(self, x, y, t, shape):
        x, y, t = np.broadcast_arrays(x, y, t)
        h = self.bump * y

        def s2(yy):
            s = self._sigma_raw(x, yy, t)
            return s * s

        central = y - h >= x
        out = np.empty(shape)
        if np.all(central):
            return (s2(y + h) - s2(y - h)) / (2.0 * h)
        fwd = (-3.0 * s2(y) + 4.0 * s2(y + h) - s2(y + 2.0 * h)) / (2.0 * h)
        ctr = (s2(y + h) - s2(np.maximum(y - h, x))) / (2.0 * h)
        out[...] = np.where(central, ctr, fwd)
        return out


def brunick_vol(x, y, t, s: VolSurface):
    return s.sigma(x, y, t)


def dsigma2_dB(x, y, t, s: VolSurface):
    return s.dsigma2_dB(x, y, t)


def discount(t, market: MarketParams):
    return market.discount(t)


def capitalization(t, market: MarketParams):
    return market.capitalization(t)


def reference_surface(spot_ref: float = 100.0, svi_time: str = "total_variance", **kw) -> VolSurface:
    """SVI-average surface of the validation runs (total-variance reading by default)."""
    return VolSurface.from_svi(REFERENCE_SVI, spot_ref, svi_time=svi_time, **kw)


def reference_market() -> MarketParams:
    return MarketParams.flat(100.0, r=0.1, q=0.05)
