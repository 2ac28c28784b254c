"""Backend selection for the numeric kernels.

Kernels come in two flavours: numba-compiled loops and vectorised numpy.
``ISOBLOCK_NO_NUMBA=1`` forces the numpy path everywhere; a missing numba
install does the same.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

NUMBA = "numba"
NUMPY = "numpy"


def _env_disabled():
    return os.environ.get("ISOBLOCK_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


def default_backend():
    return NUMPY if (not HAS_NUMBA or _env_disabled()) else NUMBA


def resolve_backend(backend=None):
    if backend is None:
        return default_backend()
    if backend not in (NUMBA, NUMPY):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")
    if backend == NUMBA and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or an identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda fn: fn
