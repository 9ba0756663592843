"""Exchange-rate forecasting from fused market series and text scores."""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
