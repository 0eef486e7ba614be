"""Kernel backend selection.

Hot numeric kernels ship in two variants: numba @njit loops and vectorized
pure numpy.  The active variant is chosen from the TRUSTLENS_BACKEND
environment variable at import time:

  auto   (default) numba when importable, numpy otherwise
  numba  require numba; ImportError if it is missing
  numpy  force the pure-numpy path

``set_backend`` switches at runtime (used by tests and the benchmark).
"""

from __future__ import annotations

import os

ENV_VAR = "TRUSTLENS_BACKEND"

try:
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

_VALID = ("auto", "numba", "numpy")


def _resolve(requested: str) -> str:
    if requested not in _VALID:
        raise ValueError(f"{ENV_VAR} must be one of {_VALID}, got {requested!r}")
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not HAVE_NUMBA:
            raise ImportError("TRUSTLENS_BACKEND=numba but numba is not installed")
        return "numba"
    return "numba" if HAVE_NUMBA else "numpy"


_active = _resolve(os.environ.get(ENV_VAR, "auto"))


def active_backend() -> str:
    """Name of the backend currently serving kernel calls."""
    return _active


def set_backend(name: str) -> str:
    """Switch kernel backend at runtime; returns the resolved name."""
    global _active
    _active = _resolve(name)
    return _active
