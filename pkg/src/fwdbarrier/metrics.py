"""Error metrics used when comparing solvers."""

from __future__ import annotations

import numpy as np


def mixed_error(values, reference, npv_floor: float = 1.0) -> np.ndarray:
    """Relative error where the reference exceeds ``npv_floor``, absolute elsewhere."""
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    diff = np.abs(values - reference)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = diff / np.abs(reference)
    return np.where(np.abs(reference) > npv_floor, rel, diff)


def summarize(errors) -> dict:
    e = np.asarray(errors, dtype=float).ravel()
    if not e.size:
        return {"count": 0, "mean": 0.0, "max": 0.0}
    return {"count": int(e.size), "mean": float(e.mean()), "max": float(e.max())}


def empirical_order(errors, ratio: float = 2.0) -> np.ndarray:
    """Successive orders ``log(e_k / e_{k+1}) / log(ratio)``."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
