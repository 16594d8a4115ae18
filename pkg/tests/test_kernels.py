"""The compiled kernels and the pure-Python fallback agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from fwdbarrier import _kernels_py, backward_pde, density_kfe, forward_pide as fp, kernels
from fwdbarrier.mesh import build_forward_grid
from fwdbarrier.model import MarketParams, VolSurface, reference_surface

compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled extension not built")
MARKET = MarketParams.flat(100.0, 0.1, 0.05)


def test_backend_lookup():
    assert kernels.get_backend("python") is _kernels_py
    assert kernels.get_backend() is not None
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_var_forces_fallback():
    env = dict(os.environ, FWDBARRIER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import fwdbarrier.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled
def test_solve_banded_dense_parity(rng):
    cy = kernels.get_backend("cython")
    for n in (5, 17, 300):
        sub, sup = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
        diag = 4.0 + rng.random(n)
        dense = rng.uniform(-0.3, 0.3, (n, 4))
        rhs = rng.standard_normal(n)
        x1, c1 = cy.solve_banded_dense(sub, diag, sup, dense, rhs)
        x2, c2 = _kernels_py.solve_banded_dense(sub, diag, sup, dense, rhs)
        assert c1 == c2 == 0
        np.testing.assert_allclose(x1, x2, rtol=1e-11, atol=1e-13)


@compiled
def test_accumulate_source_parity(rng):
    cy = kernels.get_backend("cython")
    nt, n, nk = 7, 12, 20
    U = rng.random((nt, n))
    K = np.arange(n) * 0.5
    dsig = rng.random((1, n))
    tscale = 1.0 / (1.0 + np.linspace(0, 1, nt))
    F1, F2 = np.zeros((nt, nk)), np.zeros((nt, nk))
    cy.accumulate_source(F1, U, K, dsig, tscale, 0.5)
    _kernels_py.accumulate_source(F2, U, K, dsig, tscale, 0.5)
    np.testing.assert_allclose(F1, F2, rtol=1e-13, atol=1e-15)


def _forward(options):
    grid = build_forward_grid(100.0, 105.0, 0.3, 0.5, 0.01)
    return fp.solve_all(grid, reference_surface(), MARKET, options=options)


@compiled
@pytest.mark.parametrize("opts", [
    dict(),
    dict(theta=1.0, rannacher_steps=0, stencil="cubic"),
    dict(kink_guard=0, b_correction="taylor"),
])
def test_forward_solver_parity(opts, monkeypatch, python_kernels):
    options = fp.ForwardOptions(store_times="all", **opts)
    py = _forward(options)
    monkeypatch.undo()
    cy = _forward(options)
    assert py.meta["backend"] == "python" and cy.meta["backend"] == "cython"
    np.testing.assert_allclose(py.values, cy.values, rtol=1e-10, atol=1e-12)


@compiled
def test_forward_density_term_parity(monkeypatch, python_kernels):
    def phi(b, t):
        return 1e-3 * np.exp(-np.asarray(t)) * b / 100.0

    options = fp.ForwardOptions(store_times="all", boundary_term="density", boundary_density=phi)
    py = _forward(options)
    monkeypatch.undo()
    np.testing.assert_allclose(py.values, _forward(options).values, rtol=1e-10, atol=1e-12)


@compiled
def test_backward_parity(monkeypatch, python_kernels):
    deal = backward_pde.BackwardDeal(90.0, 110.0, 0.5)
    kw = dict(dy=0.25, n_steps=30, strikes=[0.0, 90.0, 105.0])
    py = backward_pde.price_backward(deal, reference_surface(), MARKET, **kw)
    monkeypatch.undo()
    cy = backward_pde.price_backward(deal, reference_surface(), MARKET, **kw)
    np.testing.assert_allclose(py.prices, cy.prices, rtol=1e-10, atol=1e-12)


@compiled
@pytest.mark.parametrize("surface", [VolSurface.constant(0.25), reference_surface()])
def test_density_parity(surface, monkeypatch, python_kernels):
    kw = dict(n_steps=40, store_times=[0.25, 0.5])
    py = density_kfe.solve_kfe(surface, MARKET, 0.5, 200.0, 0.5, **kw)
    monkeypatch.undo()
    cy = density_kfe.solve_kfe(surface, MARKET, 0.5, 200.0, 0.5, **kw)
    np.testing.assert_allclose(py.slices, cy.slices, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(py.mass, cy.mass, rtol=1e-12)
    np.testing.assert_allclose(py.diag, cy.diag, rtol=1e-9, atol=1e-14)
