"""Lung/heart chest radiograph segmentation with a from-scratch autodiff core."""

from .autograd import Tensor, no_grad
from .errors import (ConfigError, DataError, NumericalAbort, ShapeError,
                     ThoraxsegError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "ThoraxsegError",
    "UsageError",
    "ConfigError",
    "ShapeError",
    "DataError",
    "NumericalAbort",
    "__version__",
]
