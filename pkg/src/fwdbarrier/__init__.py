"""Up-and-out call pricing under spot/running-maximum volatility."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
