"""Kernel backend selection.

The hot numeric kernels have two implementations: numba ``@njit`` versions
(:mod:`latticerd._kernels_numba`) and pure-numpy fallbacks
(:mod:`latticerd._kernels_numpy`).  The active backend is chosen once at
import from the ``LATTICERD_BACKEND`` environment variable:

* ``LATTICERD_BACKEND=numba`` — require numba (raises if unavailable);
* ``LATTICERD_BACKEND=numpy`` — force the fallback;
* unset — numba when importable, numpy otherwise.

``set_backend`` switches at runtime (used by the benchmark and by tests
comparing the two paths).  Monte Carlo estimates are reproducible per
backend: the backend name is part of every output's metadata.
"""

import os

from . import _kernels_numpy

_KERNEL_NAMES = (
    "sse_total",
    "sse_by_region",
    "waterfill_sums",
    "tilted_fluctuation",
    "ball_hits",
    "codebook_failures",
)

_active = None
_active_name = ""


def _load(name):
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    raise ValueError(f"unknown backend {name!r} (expected 'numba' or 'numpy')")


def set_backend(name):
    """Activate a kernel backend by name; returns the previous name."""
    global _active, _active_name
    previous = _active_name
    _active = _load(name)
    _active_name = name
    return previous


def backend_name():
    return _active_name


def kernel(name):
    """Look up the active implementation of a hot kernel."""
    if name not in _KERNEL_NAMES:
        raise KeyError(name)
    return getattr(_active, name)


def _default_backend():
    env = os.environ.get("LATTICERD_BACKEND", "").strip().lower()
    if env:
        return env
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


set_backend(_default_backend())
