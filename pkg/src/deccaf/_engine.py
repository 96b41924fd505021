"""Kernel engine selection.

The hot numeric loops (stump split scans, assignment flow augmentation) have
two implementations: a numba-jitted one and a pure-numpy fallback. Selection
happens once at import time from the ``DECCAF_ENGINE`` environment variable:

* ``auto`` (default) - numba if importable, numpy otherwise;
* ``numba``          - require numba, raise if it is missing;
* ``numpy``          - force the fallback even when numba is installed.
"""

from __future__ import annotations

import os

_ENV_VAR = "DECCAF_ENGINE"
_VALID = ("auto", "numba", "numpy")


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _resolve() -> str:
    requested = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if requested not in _VALID:
        raise ValueError(
            f"{_ENV_VAR} must be one of {_VALID}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _numba_available():
            raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"


ENGINE: str = _resolve()


def engine() -> str:
    """Active kernel engine, either ``"numba"`` or ``"numpy"``."""
    return ENGINE
