"""Kernel backend selection.

Hot numeric kernels exist twice: a numba-compiled version and a pure-numpy
fallback with identical semantics. `RELIGHTLAB_BACKEND` picks one:

    auto   (default) numba when importable, numpy otherwise
    numba  require numba, fail loudly if missing
    numpy  force the pure-numpy path

`RELIGHTLAB_THREADS` caps the numba thread count.
"""

import os

_CHOICE = os.environ.get("RELIGHTLAB_BACKEND", "auto").lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"RELIGHTLAB_BACKEND must be auto|numba|numpy, got {_CHOICE!r}")

_numba_ok = False
if _CHOICE in ("auto", "numba"):
    try:
        import numba  # noqa: F401

        _numba_ok = True
        threads = os.environ.get("RELIGHTLAB_THREADS")
        if threads:
            numba.set_num_threads(max(1, int(threads)))
    except ImportError:
        if _CHOICE == "numba":
            raise


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return "numba" if _numba_ok else "numpy"


def get_kernels():
    """Return the active kernel module."""
    if _numba_ok:
        from relightlab import _kernels_nb

        return _kernels_nb
    from relightlab import _kernels_np

    return _kernels_np
