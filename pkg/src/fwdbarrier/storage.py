"""CSV tables and binary cube snapshots.

CSV files start with a comment line ``# fwdbarrier-csv v1 kind=<kind>``
followed by a header row. Floats are written with ``repr`` so that a rerun
of the same computation produces a byte-identical file.

A cube snapshot is ``MAGIC``, a little-endian ``uint32`` format version and
header length, a UTF-8 JSON header with the grid, market and time indices,
then the capitalized values as row-major little-endian ``float64``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .forward_pide import PriceCube
from .mesh import ForwardGrid
from .model import MarketParams, RateCurve

CSV_VERSION = 1
CSV_PREFIX = "# fwdbarrier-csv"
MAGIC = b"FWDBCUBE"
SNAPSHOT_VERSION = 1


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a versioned CSV table; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"{CSV_PREFIX} v{CSV_VERSION} kind={kind}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    """``(kind, columns, rows)`` of a versioned CSV; numeric cells become floats."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().strip()
        parts = first.split()
        if len(parts) < 3 or parts[0] + " " + parts[1] != CSV_PREFIX:
            raise ConfigurationError(f"{path}: missing fwdbarrier CSV header")
        if parts[2] != f"v{CSV_VERSION}":
            raise ConfigurationError(f"{path}: unsupported CSV version {parts[2]}")
        kind = parts[3].split("=", 1)[1] if len(parts) > 3 and parts[3].startswith("kind=") else ""
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for rec in reader:
            out = []
            for c in rec:
                try:
                    out.append(float(c))
                except ValueError:
                    out.append(c)
            rows.append(out)
    return kind, columns, rows


def _curve_json(c: RateCurve) -> dict:
    return {"rates": list(c.rates), "ends": [e if math.isfinite(e) else "inf" for e in c.ends]}


def _curve_from(d: dict) -> RateCurve:
    return RateCurve(tuple(d["rates"]), tuple(math.inf if e == "inf" else float(e) for e in d["ends"]))


def save_cube(cube: PriceCube, path) -> Path:
    """Write a binary snapshot of ``cube``."""
    g = cube.grid
    header = {
        "grid": {"spot": g.spot, "dk": g.dk, "dt": g.dt, "s0_index": g.s0_index, "n_barrier": g.n_barrier,
                 "n_time": g.n_time, "t_max": g.t_max},
        "market": {"spot": cube.market.spot, "rate": _curve_json(cube.market.rate),
                   "dividend": _curve_json(cube.market.dividend)},
        "time_index": [int(i) for i in cube.time_index],
        "shape": list(cube.values.shape),
        "meta": {k: v for k, v in cube.meta.items() if isinstance(v, (str, int, float, bool))},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(cube.values, dtype="<f8").tobytes(order="C"))
    return path


def load_cube(path) -> PriceCube:
    """Read a snapshot written by :func:`save_cube`."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ConfigurationError(f"{path}: not a cube snapshot")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != SNAPSHOT_VERSION:
        raise ConfigurationError(f"{path}: unsupported snapshot version {version}")
    off += 8
    header = json.loads(data[off: off + hlen].decode("utf-8"))
    off += hlen
    shape = tuple(header["shape"])
    n = int(np.prod(shape))
    if len(data) - off != 8 * n:
        raise ConfigurationError(f"{path}: truncated snapshot")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
    grid = ForwardGrid(**header["grid"])
    m = header["market"]
    market = MarketParams(m["spot"], _curve_from(m["rate"]), _curve_from(m["dividend"]))
    return PriceCube(grid, market, np.asarray(header["time_index"], dtype=int), values, header["meta"])


CUBE_COLUMNS = ("strike", "barrier", "maturity", "capitalized", "price")


def cube_rows(cube: PriceCube, times=None):
    """``(K, B, T, C~, C)`` rows, ``K < B`` only; ``times`` restricts the stored slices."""
    g = cube.grid
    for k, t in enumerate(cube.times):
        if times is not None and not np.any(np.abs(np.asarray(times, dtype=float) - t) <= 1e-12):
            continue
        q = cube.market.capitalization(float(t))
        for j in range(1, g.n_barrier + 1):
            n = g.layer_size(j)
            b = g.barriers[j]
            for i in range(n - 1):
                v = float(cube.values[k, j, i])
                yield float(g.strikes[i]), float(b), float(t), v, v / q
