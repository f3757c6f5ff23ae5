"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the
environment variable ``CARDSIM_DISABLE_NUMBA`` is set to a true value
(``1``, ``true``, ``yes``).  Both backends are always importable for
comparison via :data:`numpy_backend` and :func:`numba_backend`.
"""

import os

from . import _numpy as numpy_backend


def _disabled():
    return os.environ.get("CARDSIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


def numba_backend():
    """Return the numba kernel module, or None when numba is unavailable."""
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


if _disabled():
    _backend = numpy_backend
else:
    _backend = numba_backend() or numpy_backend

BACKEND = "numba" if _backend is not numpy_backend else "numpy"

lloyd = _backend.lloyd
cooccurrence = _backend.cooccurrence
mantel_dots = _backend.mantel_dots

__all__ = ["BACKEND", "lloyd", "cooccurrence", "mantel_dots",
           "numpy_backend", "numba_backend"]
