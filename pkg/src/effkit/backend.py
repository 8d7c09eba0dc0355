"""Kernel backend selection.

The grouped-convolution inner loops are the hot path of this package. By
default they run as numba ``@njit``-compiled loop kernels; a vectorized
pure-numpy implementation is kept as a fallback and can be forced with::

    EFFKIT_BACKEND=numpy

Valid values are ``auto`` (default: numba when importable), ``numba`` and
``numpy``. Both backends are deterministic run-to-run; they are not required
to agree bit-for-bit with each other because their summation orders differ.
"""

from __future__ import annotations

import os

ENV_VAR = "EFFKIT_BACKEND"
_CHOICES = ("auto", "numba", "numpy")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False


def requested_backend() -> str:
    """The backend named by the environment, unvalidated against availability."""
    value = os.environ.get(ENV_VAR, "auto").lower()
    if value not in _CHOICES:
        raise ValueError(f"{ENV_VAR} must be one of {_CHOICES}, got {value!r}")
    return value


def active_backend() -> str:
    """Resolve the backend the convolution kernels will actually use."""
    value = requested_backend()
    if value == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if value == "numba" and not HAVE_NUMBA:
        raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
    return value


def njit(func):
    """Apply ``numba.njit(cache=True)`` when numba is present, else no-op."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
