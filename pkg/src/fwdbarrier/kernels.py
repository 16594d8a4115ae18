"""Backend selection for the inner loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``FWDBARRIER_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy/scipy fallback is used. Both expose the same
functions, so callers never branch on the backend.
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCE_PY = os.environ.get("FWDBARRIER_PURE_PYTHON", "") not in ("", "0")

if _FORCE_PY:
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

solve_banded_dense = _impl.solve_banded_dense
forward_layer_march = _impl.forward_layer_march
accumulate_source = _impl.accumulate_source
backward_layer_march = _impl.backward_layer_march
density_layer_march = _impl.density_layer_march


def get_backend(name: str | None = None):
    """Module implementing the kernels: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
