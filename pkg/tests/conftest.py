"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import numpy as np
import pytest

from fwdbarrier import _kernels_py, kernels
from fwdbarrier.model import MarketParams, VolSurface, reference_market, reference_surface

_RESULTS_KEY = pytest.StashKey[list]()

KERNEL_NAMES = ("solve_banded_dense", "forward_layer_march", "accumulate_source",
                "backward_layer_march", "density_layer_march")


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report(request):
    """Callable ``report(number, title, passed, detail)`` recording one summary line."""
    store = request.config.stash[_RESULTS_KEY]

    def report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        store.append(line)
        print(line)
        return passed

    return report


@pytest.fixture
def python_kernels(monkeypatch):
    """Route every kernel call through the pure-Python fallback."""
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(_kernels_py, name))
    monkeypatch.setattr(kernels, "BACKEND", _kernels_py.BACKEND)
    return _kernels_py


@pytest.fixture(scope="session")
def ref_setup():
    return reference_surface(), reference_market()


@pytest.fixture(scope="session")
def flat_vol():
    return VolSurface.constant(0.25), MarketParams.flat(100.0, 0.1, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
