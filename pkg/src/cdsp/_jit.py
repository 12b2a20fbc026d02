"""Backend switch for the compiled kernels.

Set ``CDSP_DISABLE_NUMBA=1`` before importing :mod:`cdsp` to force the
pure-numpy fallbacks. Numba is also skipped silently when it is not importable.
"""

import os

_DISABLED = os.environ.get("CDSP_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _numba = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is active, else return it as is."""
    if not HAVE_NUMBA:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
