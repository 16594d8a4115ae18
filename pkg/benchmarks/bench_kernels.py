"""Wall-clock comparison of the compiled kernels and the pure-Python fallback.

Each case runs a full solver call with the kernel functions routed through
one backend, then reports the best of ``--repeat`` runs and the speed-up.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
import time

import numpy as np

from fwdbarrier import backward_pde, density_kfe, forward_pide as fp, kernels
from fwdbarrier.mesh import build_forward_grid
from fwdbarrier.model import reference_market, reference_surface

NAMES = ("solve_banded_dense", "forward_layer_march", "accumulate_source", "backward_layer_march",
         "density_layer_march")


@contextlib.contextmanager
def backend(name: str):
    impl = kernels.get_backend(name)
    saved = {n: getattr(kernels, n) for n in NAMES + ("BACKEND",)}
    try:
        for n in NAMES:
            setattr(kernels, n, getattr(impl, n))
        kernels.BACKEND = impl.BACKEND
        yield
    finally:
        for n, v in saved.items():
            setattr(kernels, n, v)


def _forward():
    grid = build_forward_grid(100.0, 110.0, 0.5, 0.1, 0.005)
    fp.solve_all(grid, reference_surface(), reference_market(), options=fp.ForwardOptions(store_times=[0.5]))


def _backward():
    backward_pde.price_ladder(np.array([0.0, 90.0, 105.0]), 110.0, 0.5, reference_surface(), reference_market(),
                              dy=0.1, n_steps=50)


def _density():
    density_kfe.solve_kfe(reference_surface(), reference_market(), 0.5, 200.0, 0.5, n_steps=50)


def _banded():
    rng = np.random.default_rng(0)
    n = 400
    sub, sup = -rng.random(n), -rng.random(n)
    diag = 4.0 + rng.random(n)
    dense = 0.1 * rng.random((n, 4))
    rhs = rng.random(n)
    for _ in range(2000):
        kernels.solve_banded_dense(sub, diag, sup, dense, rhs)


CASES = {"forward layer sweep": _forward, "backward ladder": _backward, "density march": _density,
         "banded solve x2000": _banded}


def best_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write the timings to this file")
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        print("compiled kernels not built; only the fallback can be timed", file=sys.stderr)
    results = {}
    for label, fn in CASES.items():
        row = {}
        for name in ("cython", "python"):
            if name == "cython" and not kernels.compiled_available():
                continue
            with backend(name):
                fn()  # warm-up
                row[name] = best_time(fn, args.repeat)
        results[label] = row
        speedup = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{label:24s} cython {row.get('cython', float('nan')):8.3f}s  python {row['python']:8.3f}s  "
              f"speed-up {speedup:6.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
