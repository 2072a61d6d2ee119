"""JIT selection for the hot kernels.

Kernels are written once in the numba-compatible subset of Python/numpy.
By default they are compiled with ``numba.njit``; setting the environment
variable ``RCPSIM_DISABLE_NUMBA=1`` (or running without numba installed)
leaves them as plain numpy functions.  The flag is read once at import.
"""
import os

_FLAG = os.environ.get("RCPSIM_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def jit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched on the fallback path."""
    if not HAVE_NUMBA:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
