"""Kernel backend selection.

Hot inner loops (PDE marching, path ensembles, Metropolis sweeps) exist twice:
a numba @njit build and a pure-numpy build with identical semantics.  The env
variable SPINLAB_BACKEND picks one:

    SPINLAB_BACKEND=numba   force numba (ImportError if unavailable)
    SPINLAB_BACKEND=numpy   force the pure-numpy fallback
    unset / auto            numba when importable, else numpy

Selection happens once at first use; `active_backend()` reports the choice.
`benchmarks/kernel_bench.py` times the two builds against each other.
"""

from __future__ import annotations

import os

_BACKEND = None


def _resolve() -> str:
    choice = os.environ.get("SPINLAB_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"SPINLAB_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


def active_backend() -> str:
    """Name of the kernel backend in use ('numba' or 'numpy')."""
    global _BACKEND
    if _BACKEND is None:
        _BACKEND = _resolve()
    return _BACKEND


def get_kernels():
    """Import and return the kernel module for the active backend."""
    if active_backend() == "numba":
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    return mod
