"""Optional numba acceleration.

Kernels are written once as plain Python loops over numpy arrays.  When numba
is importable and ``PLAPLAB_DISABLE_NUMBA`` is unset (or ``0``), ``kernel``
compiles them with ``njit``; otherwise callers fall back to the vectorized
numpy implementations living next to each kernel.
"""
import os

_flag = os.environ.get("PLAPLAB_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    numba = None
    HAVE_NUMBA = False


def kernel(fn):
    """Compile ``fn`` with numba when available; return ``None`` otherwise."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def use_numba():
    return HAVE_NUMBA
