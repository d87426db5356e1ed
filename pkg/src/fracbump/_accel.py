"""Backend selection for the numeric kernels.

Set ``FRACBUMP_BACKEND=numpy`` to force the pure-numpy path, ``numba`` to
require numba. Default: numba when importable.
"""
import os

_requested = os.environ.get("FRACBUMP_BACKEND", "auto").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"FRACBUMP_BACKEND must be auto, numba or numpy, got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    raise ImportError("FRACBUMP_BACKEND=numba but numba is not installed")

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or an identity decorator without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f
