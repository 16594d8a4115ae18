"""Command line driver.

Every command reads a YAML config (``--config``, defaults when omitted),
writes versioned CSV tables and a JSON summary into ``--out`` and, with
``--check``, exits with code 4 when a result breaches its tolerance.
Timings go to a separate ``<command>_timing.json`` so that the CSV and
summary files of a rerun are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 tolerance breach under ``--check``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from . import __version__, density_kfe, experiments as ex, kernels, storage
from .analytic import joint_density, up_out_call
from .config import RunConfig, reference_config
from .errors import ConfigurationError, DomainError, FwdBarrierError, NumericalFailure, ParameterError, \
    TruncationError

log = logging.getLogger("fwdbarrier")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4


class Run:
    """Output directory, config and check flag of one command invocation."""

    def __init__(self, name: str, cfg: RunConfig, out: Path, check: bool):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.check = check
        self.summary: dict = {"command": name, "version": __version__}
        self.timing: Dict[str, float] = {}
        self.breaches: list = []
        out.mkdir(parents=True, exist_ok=True)

    def timed(self, label: str, fn: Callable, *a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        self.timing[label] = round(time.perf_counter() - t0, 3)
        return res

    def csv(self, suffix: str, columns, rows) -> Path:
        return storage.write_csv(self.out / f"{self.name}{suffix}.csv", f"{self.name}{suffix}", columns, rows)

    def require(self, label: str, ok: bool, detail: str) -> None:
        self.summary.setdefault("checks", {})[label] = {"pass": bool(ok), "detail": detail}
        if not ok:
            self.breaches.append(f"{label}: {detail}")

    def finish(self) -> int:
        (self.out / f"{self.name}_summary.json").write_text(json.dumps(_jsonable(self.summary), indent=2,
                                                                       sort_keys=True) + "\n")
        timing = dict(self.timing, backend=kernels.BACKEND)
        (self.out / f"{self.name}_timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
        for b in self.breaches:
            log.error("tolerance breach: %s", b)
        if self.check and self.breaches:
            return EXIT_TOLERANCE
        return EXIT_OK


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _ladder_check(run: Run, label: str, values) -> None:
    e = run.cfg.experiment
    if e.reference is None:
        return
    ok = ex.within_tolerance(values, e.reference, e.rel_tol, e.abs_tol, e.npv_floor)
    bad = [float(k) for k, good in zip(e.strikes, ok) if not good]
    run.require(label, not bad, "all strikes within tolerance" if not bad else f"strikes off: {bad}")


def _analytic(cfg: RunConfig, strikes, barrier, maturity):
    if cfg.surface.kind != "constant":
        return None
    m = cfg.market
    return np.array([up_out_call(m.spot, float(k), barrier, maturity, m.rate, m.dividend, cfg.surface.vol)
                     for k in strikes])


# --------------------------------------------------------------------------- commands

def cmd_price_forward(run: Run) -> None:
    """Forward cube, snapshot and strike ladder at the experiment barrier and maturity."""
    cfg, e = run.cfg, run.cfg.experiment
    cube = run.timed("forward", ex.run_forward, cfg, store_times=[e.maturity])
    storage.save_cube(cube, run.out / "price_forward_cube.bin")
    run.csv("_cube", storage.CUBE_COLUMNS, storage.cube_rows(cube, [e.maturity]))
    prices = ex.forward_ladder(cube, e.strikes, e.barrier, e.maturity)
    ref = e.reference if e.reference is not None else [float("nan")] * len(prices)
    ana = _analytic(cfg, e.strikes, e.barrier, e.maturity)
    cols = ["strike", "barrier", "maturity", "price", "reference"] + (["analytic"] if ana is not None else [])
    rows = [[k, e.barrier, e.maturity, p, r] + ([a] if ana is not None else [])
            for k, p, r, a in zip(e.strikes, prices, ref, ana if ana is not None else prices)]
    run.csv("", cols, rows)
    run.summary.update(dk=cube.grid.dk, dt=cube.grid.dt, extrapolated=bool(cube.meta.get("extrapolated", False)),
                       price_k0=float(prices[0]))
    _ladder_check(run, "ladder_vs_reference", prices)
    if ana is not None:
        ok = ex.within_tolerance(prices, ana, 2e-3, e.abs_tol, e.npv_floor)
        run.require("ladder_vs_analytic", bool(ok.all()), f"{int((~ok).sum())} strikes off")


def cmd_price_backward(run: Run) -> None:
    """Backward PDE prices for the experiment strike ladder."""
    cfg, e = run.cfg, run.cfg.experiment
    res = run.timed("backward", ex.backward_ladder, cfg)
    ana = _analytic(cfg, e.strikes, e.barrier, e.maturity)
    cols = ["strike", "barrier", "maturity", "price"] + (["analytic"] if ana is not None else [])
    rows = [[k, e.barrier, e.maturity, p] + ([a] if ana is not None else [])
            for k, p, a in zip(e.strikes, res.prices, ana if ana is not None else res.prices)]
    run.csv("", cols, rows)
    run.summary.update(dy=cfg.backward.dy, n_steps=cfg.backward.n_steps, levels=res.n_levels)
    _ladder_check(run, "ladder_vs_reference", res.prices)
    if ana is not None:
        ok = ex.within_tolerance(res.prices, ana, 2e-3, e.abs_tol, e.npv_floor)
        run.require("ladder_vs_analytic", bool(ok.all()), f"{int((~ok).sum())} strikes off")


def cmd_compare(run: Run) -> None:
    """Forward cube against the backward solver on the strike/barrier panel."""
    cfg, e = run.cfg, run.cfg.experiment
    cube = run.timed("forward", ex.run_forward, cfg, store_times=[e.maturity])
    cmp = run.timed("backward_panel", ex.compare_panel, cfg, cube)
    rows = []
    for j, B in enumerate(cmp.barriers):
        for i, K in enumerate(cmp.strikes):
            rows.append([K, B, cmp.forward[j, i], cmp.backward[j, i], cmp.metric[j, i]])
    run.csv("", ["strike", "barrier", "forward", "backward", "metric"], rows)
    run.summary.update(average=cmp.average, maximum=cmp.maximum, argmax_strike=cmp.argmax[0],
                       argmax_barrier=cmp.argmax[1], points=int(cmp.metric.size))
    run.require("panel_average", cmp.average <= e.panel_avg_tol, f"{cmp.average:.3g} vs {e.panel_avg_tol:g}")
    run.require("panel_maximum", cmp.maximum <= e.panel_max_tol, f"{cmp.maximum:.3g} vs {e.panel_max_tol:g}")


def cmd_recover(run: Run) -> None:
    """Recover the volatility from a forward cube and report the round-trip error."""
    cfg, r = run.cfg, run.cfg.recovery
    cube, rec, worst = run.timed("recover", ex.recovery_run, cfg)
    surface = cfg.build_surface()

    def rows():
        for t in r.export_times:
            k = int(np.argmin(np.abs(rec.times - t)))
            if abs(rec.times[k] - t) > 1e-9:
                continue
            for j, B in enumerate(rec.barriers):
                for i, K in enumerate(rec.strikes):
                    if rec.mask[k, j, i]:
                        yield [K, B, rec.times[k], rec.sigma[k, j, i], float(surface.sigma(K, B, rec.times[k]))]

    run.csv("", ["strike", "barrier", "maturity", "sigma_hat", "sigma"], rows())
    run.summary.update(max_rel_error=worst, coverage=rec.coverage(r.t_min, cfg.experiment.maturity,
                                                                  0.5 * cfg.market.spot), report=rec.report)
    run.require("round_trip", worst <= r.tol, f"max relative error {worst:.3g} vs {r.tol:g}")


def cmd_density(run: Run) -> None:
    """Joint density of spot and maximum, its mass and the density-based prices."""
    cfg, e, d = run.cfg, run.cfg.experiment, run.cfg.density
    dens = run.timed("density", ex.density_run, cfg)
    T = e.maturity

    def rows():
        st = max(1, d.export_stride)
        sl = dens.slice(T)
        for j in range(0, len(dens.levels), st):
            for i in range(0, dens.diag_index(j) + 1, st):
                yield [i * dens.dx, dens.levels[j], T, sl[j, i]]

    run.csv("", ["x", "y", "t", "density"], rows())
    prices = ex.density_ladder(cfg, dens)
    run.csv("_prices", ["strike", "barrier", "maturity", "price"],
            [[k, e.barrier, T, p] for k, p in zip(e.strikes, prices)])
    mass = float(dens.mass[-1])
    run.summary.update(mass=mass, clipped=int(dens.clipped), dx=d.dx, b_max=d.b_max)
    run.require("mass", 0.99 <= mass <= 1.0 + 1e-6, f"mass {mass:.6f}")
    if e.reference is not None:
        err = np.abs(prices - np.asarray(e.reference))
        run.require("prices_vs_reference", float(err.max()) <= d.price_tol, f"max abs diff {err.max():.3g}")
    if cfg.surface.kind == "constant":
        m = cfg.market
        sl = dens.slice(T)
        X, Y = np.meshgrid(dens.x, dens.levels)
        away = (X <= Y - 1.0) & (X > 0.0)
        exact = joint_density(X[away], Y[away], m.spot, T, m.rate, m.dividend, cfg.surface.vol)
        sup = float(np.max(np.abs(sl[away] - exact)))
        run.summary["sup_error_vs_closed_form"] = sup
        run.require("closed_form", sup <= 2e-3, f"sup-norm {sup:.3g}")


def cmd_mc(run: Run) -> None:
    """Monte-Carlo prices for the experiment strike ladder."""
    cfg, e = run.cfg, run.cfg.experiment
    res = run.timed("mc", ex.mc_ladder, cfg)
    ana = _analytic(cfg, e.strikes, e.barrier, e.maturity)
    rows = [[k, e.barrier, e.maturity, r.estimate, r.stderr, r.paths, r.steps] for k, r in zip(e.strikes, res)]
    run.csv("", ["strike", "barrier", "maturity", "estimate", "stderr", "paths", "steps"], rows)
    run.summary.update(seed=cfg.seed, paths=cfg.mc.paths, mode=cfg.mc.mode)
    target = ana if ana is not None else (np.asarray(e.reference) if e.reference is not None else None)
    if target is not None:
        z = [abs(r.estimate - t) / r.stderr if r.stderr > 0 else (0.0 if r.estimate == t else np.inf)
             for r, t in zip(res, target)]
        worst = float(max(z)) if z else 0.0
        run.summary["max_z"] = worst
        run.require("mc_within_3se", worst <= 3.0, f"max |z| {worst:.2f}")


def cmd_convergence(run: Run) -> None:
    """Empirical orders of the forward solver in the strike and time steps."""
    studies = [run.timed("dk", ex.convergence_dk, run.cfg), run.timed("dt", ex.convergence_dt, run.cfg)]
    rows = []
    for s in studies:
        orders = [float("nan")] + list(s.orders)
        rows += [[s.parameter, h, err, o] for h, err, o in zip(s.steps, s.errors, orders)]
    run.csv("", ["parameter", "step", "max_mixed_error", "order"], rows)
    dk_order, dt_order = float(studies[0].orders[-1]), float(studies[1].orders[-1])
    run.summary.update(dk_order=dk_order, dt_order=dt_order)
    run.require("dk_order", dk_order >= 0.9, f"{dk_order:.3f}")
    run.require("dt_order", dt_order >= 1.8, f"{dt_order:.3f}")


COMMANDS = {
    "price-forward": cmd_price_forward,
    "price-backward": cmd_price_backward,
    "compare": cmd_compare,
    "recover": cmd_recover,
    "density": cmd_density,
    "mc": cmd_mc,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwdbarrier", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name.replace("-", " ")).strip())
        sp.add_argument("--config", type=Path, help="YAML run config (defaults when omitted)")
        sp.add_argument("--out", type=Path, help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--check", action="store_true", help="exit 4 when a tolerance is breached")
        sp.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    ic = sub.add_parser("init-config", help="write the reference config with every default")
    ic.add_argument("path", type=Path, nargs="?", default=Path("fwdbarrier.yaml"))
    return p


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else reference_config()
    if args.out is not None:
        cfg = cfg.replace(output=str(args.out))
    if args.seed is not None:
        cfg = cfg.replace(seed=int(args.seed))
    return cfg


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init-config":
            reference_config().save(args.path)
            print(args.path)
            return EXIT_OK
        cfg = _load(args)
        run = Run(args.command.replace("-", "_"), cfg, Path(cfg.output), args.check)
        COMMANDS[args.command](run)
        code = run.finish()
        print(json.dumps(_jsonable(run.summary.get("checks", {})), sort_keys=True))
        return code
    except (ConfigurationError, ParameterError, DomainError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalFailure, TruncationError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except FwdBarrierError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
