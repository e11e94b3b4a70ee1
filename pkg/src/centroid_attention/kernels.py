"""Backend dispatch for the hot kernels.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback is used. `set_backend` lets benchmarks and tests force one
side. Wrappers coerce inputs to contiguous float64 so the compiled kernels
can take typed memoryviews.
"""

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

HAVE_COMPILED = _ckernels is not None

_active = _ckernels if HAVE_COMPILED else _kernels_py


def active_backend() -> str:
    """Name of the backend currently in use: 'compiled' or 'python'."""
    return _active.BACKEND_NAME


def set_backend(name: str) -> str:
    """Select 'compiled', 'python', or 'auto' (prefer compiled). Returns the
    name actually activated."""
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "compiled":
        if not HAVE_COMPILED:
            raise ValueError("compiled kernel backend is not available; "
                             "build the extension or use 'python'/'auto'")
        _active = _ckernels
    elif name == "auto":
        _active = _ckernels if HAVE_COMPILED else _kernels_py
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return active_backend()


def _c2d(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_sqdist(x, u):
    return _active.pairwise_sqdist(_c2d(x), _c2d(u))


def knn_indices(x, u, k):
    return _active.knn_indices(_c2d(x), _c2d(u), int(k))


def fps_indices(x, m, start):
    return _active.fps_indices(_c2d(x), int(m), int(start))


def gather_weighted_sum(weights, idx, values):
    return _active.gather_weighted_sum(
        _c2d(weights), np.ascontiguousarray(idx, dtype=np.intp), _c2d(values))
