"""Frequency-blending skip connections for UNets, with everything needed to
train and score them: a float64 reverse-mode autodiff core, fixed low/high-pass
filters, seven skip-connection variants, depth metrics and radar summaries, a
synthetic scene generator, and a deterministic training loop behind the
``hskp`` command line tool.
"""
import os

# BLAS thread cap; must happen before numpy initializes its backend.
_threads = os.environ.get("HSKP_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

from .tensor import Tensor, Tape, gradcheck  # noqa: E402
from .errors import (  # noqa: E402
    DimensionError, ParameterError, UsageError, NumericError,
    ConfigError, FormatError, EvaluationError, ComparisonError,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "gradcheck",
    "DimensionError", "ParameterError", "UsageError", "NumericError",
    "ConfigError", "FormatError", "EvaluationError", "ComparisonError",
    "__version__",
]
