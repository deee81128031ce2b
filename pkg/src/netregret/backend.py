"""Kernel backend selection.

Every hot loop in this package ships twice: a numba ``@njit`` build and a
pure-numpy fallback.  The environment variable ``NETREGRET_BACKEND`` picks
which one runs:

  auto    use numba when importable, numpy otherwise (default)
  numba   require numba, raise if it is missing
  numpy   force the pure-numpy path

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

_choice = os.environ.get("NETREGRET_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        "NETREGRET_BACKEND must be one of auto|numba|numpy, got %r" % (_choice,)
    )

if _choice == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise
        HAVE_NUMBA = False

#: name of the backend running the hot loops in this process
ACTIVE = "numba" if HAVE_NUMBA else "numpy"
