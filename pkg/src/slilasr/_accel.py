"""Backend switch for the compiled kernels.

Set ``SLILASR_NUMBA=0`` to run every hot loop on the pure-numpy path.
The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("SLILASR_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when numba is off."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
