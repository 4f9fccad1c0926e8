"""JIT selection.

Hot loops are written once and compiled with numba when it is importable.
Setting ``METABRANCH_DISABLE_NUMBA=1`` runs the very same functions as plain
Python on numpy arrays, which is slow but useful for debugging and for the
kernel benchmark.
"""
import functools
import os

DISABLED = os.environ.get("METABRANCH_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USING_NUMBA = numba is not None and not DISABLED


def _identity(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def _wrap(f):
        return f

    return _wrap


if USING_NUMBA:
    njit = functools.partial(numba.njit, cache=True, nogil=True)
else:
    njit = _identity
