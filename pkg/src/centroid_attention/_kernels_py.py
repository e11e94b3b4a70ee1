"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled extension `_ckernels` exactly; `kernels` picks one of
the two at import time. Keep signatures and semantics in lockstep with the
.pyx file: same tie rules, same accumulation structure.
"""

import numpy as np

BACKEND_NAME = "python"


def pairwise_sqdist(x, u):
    """Squared L2 distances, entry (i, j) = ||x_i - u_j||^2.

    Uses the explicit difference rather than the |x|^2 + |u|^2 - 2x.u
    expansion: the expansion can go slightly negative and does not return
    an exact 0 for identical rows.
    """
    diff = x[:, None, :] - u[None, :, :]
    return np.einsum("nmd,nmd->nm", diff, diff)


def knn_indices(x, u, k):
    """For each row of u, indices of its k nearest rows of x.

    Returns an (M, k) int array ordered by ascending squared distance,
    ties broken by lower index. k must already be clamped to len(x).
    """
    d2 = pairwise_sqdist(x, u)
    # stable sort keeps the lower index first on exact ties
    order = np.argsort(d2, axis=0, kind="stable")
    return np.ascontiguousarray(order[:k, :].T)


def fps_indices(x, m, start):
    """Greedy farthest point sampling: m indices into x, first pick = start.

    Each later pick maximizes the min squared distance to the picks so far;
    ties go to the lower index (np.argmax takes the first maximum).
    """
    picks = np.empty(m, dtype=np.intp)
    picks[0] = start
    d2 = ((x - x[start]) ** 2).sum(axis=1)
    for t in range(1, m):
        nxt = int(np.argmax(d2))
        picks[t] = nxt
        np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1), out=d2)
    return picks


def gather_weighted_sum(weights, idx, values):
    """out[j] = sum_t weights[j, t] * values[idx[j, t]].

    weights, idx: (M, k); values: (N, d); result (M, d). The fancy-indexing
    gather allocates an (M, k, d) temporary here; the compiled version
    accumulates in place.
    """
    return np.einsum("mk,mkd->md", weights, values[idx])
