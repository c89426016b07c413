"""Kernel backend selection.

Two interchangeable implementations of the hot array kernels exist: a
compiled Cython module (``_speedups``) and a pure-NumPy fallback.  The
compiled one is picked when importable; ``HSKP_KERNELS=python`` or
``HSKP_KERNELS=compiled`` forces the choice.  Both expose the same
functions and are cross-checked in the test suite.
"""
import os

from . import numpy_backend
from ..errors import UsageError


def _select():
    requested = os.environ.get("HSKP_KERNELS", "").strip().lower()
    if requested not in ("", "python", "compiled"):
        raise UsageError(
            f"HSKP_KERNELS must be 'python' or 'compiled', got {requested!r}")
    if requested == "python":
        return numpy_backend
    try:
        from . import _speedups
        return _speedups
    except ImportError:
        if requested == "compiled":
            raise UsageError(
                "HSKP_KERNELS=compiled but the compiled kernel module is not "
                "available; reinstall with a C compiler or unset the variable")
        return numpy_backend


backend = _select()
