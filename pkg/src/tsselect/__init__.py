"""Forecasting model selection benchmark: baselines, meta-learners and LLM selectors."""

from .errors import DataError, ProviderError, TsSelectError, UsageError
from .kernels import BACKEND
from .space import ModelSpace, ModelSpec, canonical_space, load_space

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataError",
    "ModelSpace",
    "ModelSpec",
    "ProviderError",
    "TsSelectError",
    "UsageError",
    "__version__",
    "canonical_space",
    "load_space",
]
