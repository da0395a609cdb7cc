"""Numba dispatch.

Hot kernels are written once as plain numpy-compatible Python and compiled
with ``numba.njit`` when available. Setting ``AVATARFIT_NO_NUMBA=1`` forces the
vectorized numpy fallback path everywhere.
"""
import os

_DISABLED = os.environ.get("AVATARFIT_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via the env flag in CI
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if NUMBA_AVAILABLE else "numpy"
