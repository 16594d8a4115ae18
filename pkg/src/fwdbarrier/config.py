"""Run configuration: named blocks read from and written to YAML.

Every block is a frozen dataclass with explicit defaults. Parsing rejects
unknown keys and validates values before any solver starts, and
``RunConfig.from_dict(cfg.to_dict()) == cfg`` holds for every valid config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigurationError
from .model import REFERENCE_SVI, MarketParams, SviParams, VolSurface

TABLE_STRIKES = tuple(float(k) for k in range(0, 118, 9)) + (120.0,)
# published strike-ladder prices for the reference setup
TABLE_PRICES = (42.1486, 37.8567, 33.5649, 29.2731, 24.9815, 20.6928, 16.4263, 12.2536, 8.3438, 4.9680,
                2.4170, 0.8472, 0.1546, 0.0023, 0.0)


@dataclass(frozen=True)
class MarketBlock:
    spot: float = 100.0
    rate: float = 0.1
    dividend: float = 0.05

    def build(self) -> MarketParams:
        return MarketParams.flat(self.spot, self.rate, self.dividend)


@dataclass(frozen=True)
class SurfaceBlock:
    kind: str = "svi"
    vol: float = 0.25
    a: float = REFERENCE_SVI.a
    b: float = REFERENCE_SVI.b
    rho: float = REFERENCE_SVI.rho
    m: float = REFERENCE_SVI.m
    sigma: float = REFERENCE_SVI.sigma
    svi_time: str = "total_variance"

    def build(self, spot: float) -> VolSurface:
        if self.kind == "constant":
            return VolSurface.constant(self.vol, spot)
        if self.kind == "svi":
            return VolSurface.from_svi(SviParams(self.a, self.b, self.rho, self.m, self.sigma), spot,
                                       svi_time=self.svi_time)
        raise ConfigurationError(f"surface kind must be 'svi' or 'constant', got {self.kind!r}")


@dataclass(frozen=True)
class GridBlock:
    """Forward grid: target strike step, time step, ``B_Max``, ``T_Max`` and scheme."""

    dk: float = 0.025
    dt: float = 0.001
    b_max: float = 120.0
    t_max: float = 1.0
    theta: float = 0.5
    rannacher_steps: int = 2
    stencil: str = "phi"
    kink_guard: int = 1
    extrapolate: bool = True


@dataclass(frozen=True)
class BackwardBlock:
    dy: float = 0.02
    n_steps: int = 200
    top_layer: str = "limit"


@dataclass(frozen=True)
class DensityBlock:
    dx: float = 0.125
    b_max: float = 300.0
    n_steps: int = 400
    warm_time: Optional[float] = None
    export_stride: int = 8
    price_tol: float = 1e-3


@dataclass(frozen=True)
class McBlock:
    paths: int = 1_000_000
    steps_per_year: int = 512
    antithetic: bool = True
    mode: str = "bridge"
    chunk_size: int = 1 << 16


@dataclass(frozen=True)
class RecoveryBlock:
    dk: float = 0.05
    dt: float = 0.005
    t_first: float = 0.2
    t_step: float = 0.01
    tau_den: Optional[float] = None
    rel_density: float = 1e-2
    barrier_margin: float = 2e-2
    t_min: float = 0.25
    export_times: tuple = (0.25, 0.5, 0.75, 1.0)
    tol: float = 1e-2


@dataclass(frozen=True)
class ExperimentBlock:
    """Deal sets and tolerances shared by the commands."""

    barrier: float = 120.0
    maturity: float = 1.0
    strikes: tuple = TABLE_STRIKES
    reference: Optional[tuple] = TABLE_PRICES
    panel_strikes: tuple = tuple(float(k) for k in range(120))
    panel_barriers: tuple = tuple(100.5 + 0.5 * i for i in range(40))
    rel_tol: float = 5e-3
    abs_tol: float = 5e-4
    npv_floor: float = 1.0
    panel_avg_tol: float = 1e-4
    panel_max_tol: float = 5e-4
    panel_dy: float = 0.1
    panel_steps: int = 100
    convergence_dk: tuple = (0.4, 0.2, 0.1)
    convergence_dt: tuple = (0.04, 0.02, 0.01)


_BLOCKS = {
    "market": MarketBlock,
    "surface": SurfaceBlock,
    "grid": GridBlock,
    "backward": BackwardBlock,
    "density": DensityBlock,
    "mc": McBlock,
    "recovery": RecoveryBlock,
    "experiment": ExperimentBlock,
}


@dataclass(frozen=True)
class RunConfig:
    market: MarketBlock = field(default_factory=MarketBlock)
    surface: SurfaceBlock = field(default_factory=SurfaceBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    backward: BackwardBlock = field(default_factory=BackwardBlock)
    density: DensityBlock = field(default_factory=DensityBlock)
    mc: McBlock = field(default_factory=McBlock)
    recovery: RecoveryBlock = field(default_factory=RecoveryBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    output: str = "out"
    seed: int = 0

    def __post_init__(self):
        validate(self)

    # ------------------------------------------------------------ conversion
    def to_dict(self) -> dict:
        out = {}
        for name in _BLOCKS:
            block = getattr(self, name)
            out[name] = {f.name: _plain(getattr(block, f.name)) for f in dataclasses.fields(block)}
        out["output"] = self.output
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping of named blocks")
        unknown = set(data) - set(_BLOCKS) - {"output", "seed"}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, block_cls in _BLOCKS.items():
            raw = data.get(name, {}) or {}
            if not isinstance(raw, dict):
                raise ConfigurationError(f"block {name!r} must be a mapping")
            kw[name] = _build_block(name, block_cls, raw)
        if "output" in data:
            kw["output"] = str(data["output"])
        if "seed" in data:
            kw["seed"] = _coerce(int, data["seed"], "seed")
        return cls(**kw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=100)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {path} not found")
        return cls.from_yaml(p.read_text())

    def save(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_yaml())
        return p

    def replace(self, **blocks) -> "RunConfig":
        """Copy with whole blocks or block fields replaced (``grid={"dk": 0.1}``)."""
        kw = {}
        for name, val in blocks.items():
            if name in _BLOCKS and isinstance(val, dict):
                kw[name] = dataclasses.replace(getattr(self, name), **val)
            else:
                kw[name] = val
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------ factories
    def build_market(self) -> MarketParams:
        return self.market.build()

    def build_surface(self) -> VolSurface:
        return self.surface.build(self.market.spot)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _coerce(kind, value, name):
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigurationError(f"{name} must be true or false")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"{name} must be an integer")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name} must be a number")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{name} must be a string")
        return value
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{name} must be a list")
        return tuple(_coerce(float, x, name) for x in value)
    return value


def _build_block(name, block_cls, raw: dict):
    fields = {f.name: f for f in dataclasses.fields(block_cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigurationError(f"unknown keys in block {name!r}: {sorted(unknown)}")
    kw = {}
    for key, value in raw.items():
        f = fields[key]
        annotation = str(f.type)
        label = f"{name}.{key}"
        if value is None:
            if "Optional" not in annotation:
                raise ConfigurationError(f"{label} must not be null")
            kw[key] = None
            continue
        kind = tuple if "tuple" in annotation else float if f.default is None else type(f.default)
        kw[key] = _coerce(kind, value, label)
    return block_cls(**kw)


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigurationError` on the first invalid field."""
    m, s, g = cfg.market, cfg.surface, cfg.grid
    if not m.spot > 0.0:
        raise ConfigurationError("market.spot must be positive")
    if s.kind not in ("svi", "constant"):
        raise ConfigurationError("surface.kind must be 'svi' or 'constant'")
    if s.kind == "constant" and not s.vol > 0.0:
        raise ConfigurationError("surface.vol must be positive")
    if s.svi_time not in ("flat", "total_variance"):
        raise ConfigurationError("surface.svi_time must be 'flat' or 'total_variance'")
    if not (g.dk > 0.0 and g.dt > 0.0 and g.t_max > 0.0):
        raise ConfigurationError("grid.dk, grid.dt and grid.t_max must be positive")
    if not g.b_max > m.spot:
        raise ConfigurationError("grid.b_max must exceed market.spot")
    if not 0.0 <= g.theta <= 1.0:
        raise ConfigurationError("grid.theta must lie in [0, 1]")
    if g.rannacher_steps < 0 or g.kink_guard < 0:
        raise ConfigurationError("grid.rannacher_steps and grid.kink_guard must be nonnegative")
    if g.stencil not in ("phi", "cubic"):
        raise ConfigurationError("grid.stencil must be 'phi' or 'cubic'")
    b = cfg.backward
    if not (b.dy > 0.0 and b.n_steps >= 1) or b.top_layer not in ("limit", "zero"):
        raise ConfigurationError("backward block: dy > 0, n_steps >= 1, top_layer 'limit' or 'zero'")
    d = cfg.density
    if not (d.dx > 0.0 and d.n_steps >= 2 and d.b_max > m.spot and (d.warm_time is None or d.warm_time > 0.0)):
        raise ConfigurationError("density block: dx > 0, n_steps >= 2, b_max > spot, warm_time > 0")
    c = cfg.mc
    if c.paths < 1 or c.steps_per_year < 1 or c.mode not in ("bridge", "discrete"):
        raise ConfigurationError("mc block: paths >= 1, steps_per_year >= 1, mode 'bridge' or 'discrete'")
    r = cfg.recovery
    if not (r.dk > 0.0 and r.dt > 0.0 and r.t_step > 0.0 and r.rel_density >= 0.0 and r.barrier_margin >= 0.0):
        raise ConfigurationError("recovery block: positive steps, nonnegative thresholds")
    e = cfg.experiment
    if not (e.maturity > 0.0 and e.rel_tol > 0.0 and e.abs_tol > 0.0):
        raise ConfigurationError("experiment block: maturity and tolerances must be positive")
    if any(k < 0.0 for k in e.strikes):
        raise ConfigurationError("experiment.strikes must be nonnegative")
    if e.reference is not None and len(e.reference) != len(e.strikes):
        raise ConfigurationError("experiment.reference must have one value per strike")
    if e.barrier > g.b_max or e.maturity > g.t_max + 1e-12:
        raise ConfigurationError("experiment barrier/maturity must lie inside the forward grid")
    try:
        np.asarray(e.panel_strikes, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError("experiment.panel_strikes must be numbers") from exc


def reference_config() -> RunConfig:
    """Every default spelled out: the strike-ladder experiment on the SVI-average surface."""
    return RunConfig()
