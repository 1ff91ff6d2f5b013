"""Backend switch for the hot kernels.

``BAYESDIFF_BACKEND=numpy`` (or ``BAYESDIFF_DISABLE_NUMBA=1``) forces the
pure-numpy implementations; otherwise numba is used when importable.
"""
import os

_env_backend = os.environ.get("BAYESDIFF_BACKEND", "").strip().lower()
_disabled = os.environ.get("BAYESDIFF_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled and _env_backend != "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
