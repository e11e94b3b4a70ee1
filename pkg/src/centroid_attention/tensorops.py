"""Dense float64 tensor primitives shared by every other module.

Arrays are plain C-order numpy ndarrays (rank 1-3). Everything here is a
pure function; softmax and logsumexp use max-subtraction so magnitudes up
to ~1e4 in the exponent stay finite.
"""

import numpy as np

from . import kernels


def as_tensor(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product of 2-D tensors with an explicit inner-extent check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D tensors, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(a, scale: float = 1.0) -> np.ndarray:
    """Softmax of scale*a along the last axis, stabilized by max-subtraction."""
    a = np.asarray(a, dtype=np.float64)
    z = scale * a
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(a, alpha: float = 1.0) -> float:
    """(1/alpha) * log(sum_j exp(alpha * a_j)) for a 1-D tensor, alpha > 0."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    hi = a.max()
    return float(hi + np.log(np.exp(alpha * (a - hi)).sum()) / alpha)


def row_logsumexp(a, alpha: float = 1.0) -> np.ndarray:
    """Row-wise version of logsumexp: (N, M) -> (N,)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    hi = a.max(axis=-1, keepdims=True)
    return (hi + np.log(np.exp(alpha * (a - hi)).sum(axis=-1, keepdims=True)) / alpha)[..., 0]


def pairwise_sqdist(x, u) -> np.ndarray:
    """Squared L2 distance matrix, entry (i, j) = ||x_i - u_j||^2."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.ndim != 2 or u.ndim != 2 or x.shape[1] != u.shape[1]:
        raise ValueError(f"feature dimensions differ: {x.shape} vs {u.shape}")
    return kernels.pairwise_sqdist(x, u)
