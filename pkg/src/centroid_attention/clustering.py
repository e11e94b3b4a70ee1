"""Soft k-means scoring, centroid initializers, and a Lloyd oracle.

The score being ascended is sum over kernels and inputs of
(1/alpha) * log sum_j exp(alpha * phi(x_i, u_j)). Its analytic gradient
is the similarity-weighted value field, which is what one attention
update applies; `objective_gradient` shares that code path on purpose so
the two stay bit-for-bit identical, while tests certify the value against
finite differences.

Lloyd's algorithm lives here as an independent oracle for the sharp-limit
behavior (alpha -> infinity turns the soft score into nearest-centroid
k-means). It is deliberately plain: explicit assignment and mean steps,
ties to the lower index, empty clusters keep their centroid.
"""

from dataclasses import dataclass

import numpy as np

from . import attention, tensorops
from . import kernels as _k


# ----- initializers -----------------------------------------------------

class RandomSampleWithoutReplacement:
    """M distinct input rows, drawn with a self-contained seeded stream so
    repeated calls agree."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def init(self, x, m):
        x = np.asarray(x, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        idx = np.sort(rng.choice(x.shape[0], size=m, replace=False))
        return x[idx].copy()


class FarthestPointSampling:
    """Greedy max-min coverage. start="min" resolves to the
    lexicographically smallest row, making the pick order a function of
    the point set rather than its ordering."""

    def __init__(self, start=0):
        self.start = start

    def init(self, x, m):
        x = np.asarray(x, dtype=np.float64)
        start = self.start
        if start == "min":
            start = int(np.lexsort(x.T[::-1])[0])
        return x[farthest_point_sample(x, m, start)].copy()


class MeanPoolStride:
    """Mean over contiguous blocks of `stride` inputs. Requires N divisible
    by the stride and m = N / stride; stride 1 is the identity."""

    def __init__(self, stride: int = 1):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.stride = int(stride)

    def init(self, x, m):
        x = np.asarray(x, dtype=np.float64)
        n, s = x.shape[0], self.stride
        if n % s != 0:
            raise ValueError(f"{n} inputs do not divide into blocks of {s}")
        if m != n // s:
            raise ValueError(f"stride {s} on {n} inputs yields {n // s} centroids, not {m}")
        return x.reshape(m, s, -1).mean(axis=1)


class LearnedLinear:
    """Centroids as learned mixtures of the inputs: U = W X with an M x N
    weight matrix (trainable upstream)."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)

    def init(self, x, m):
        x = np.asarray(x, dtype=np.float64)
        if self.weights.shape != (m, x.shape[0]):
            raise ValueError(
                f"mixing matrix shape {self.weights.shape} cannot map "
                f"{x.shape[0]} inputs to {m} centroids")
        return self.weights @ x


class KMeansWarmStart:
    """Farthest-point seeds refined by a few Lloyd iterations."""

    def __init__(self, iters: int = 3, start=0):
        self.iters = int(iters)
        self.start = start

    def init(self, x, m):
        x = np.asarray(x, dtype=np.float64)
        start = self.start
        if start == "min":
            start = int(np.lexsort(x.T[::-1])[0])
        seeds = farthest_point_sample(x, m, start)
        return lloyd_kmeans(x, m, self.iters, seeds).centroids


# ----- soft objective ---------------------------------------------------

def soft_kmeans_objective(x, u, kernels, alpha: float = 1.0) -> float:
    """Smoothed assignment score; the alpha -> infinity limit is the
    (sign-flipped) k-means distortion for the distance kernel."""
    if alpha <= 0:
        raise ValueError(f"sharpness must be positive, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    total = 0.0
    for kern in kernels:
        phi = kern.phi_matrix(x, u)
        total += tensorops.row_logsumexp(phi, alpha).sum()
    return float(total)


def objective_gradient(x, u, kernels, alpha: float = 1.0) -> np.ndarray:
    """Analytic gradient of the objective in the centroids: per kernel, the
    softly-assigned pull of every input on every centroid."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    grad = np.zeros_like(u)
    for kern in kernels:
        w = attention.similarity_matrix(x, u, kern, alpha, axis="centroids")
        grad += kern.tied_increment(x, u, w)
    return grad


# ----- hard clustering oracle -------------------------------------------

@dataclass
class ClusterAssignment:
    labels: np.ndarray    # (N,) hard label per input, ties to lower index
    weights: np.ndarray   # (N, M) rows sum to 1; labels = row argmax

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.weights = np.asarray(self.weights, dtype=np.float64)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: ClusterAssignment
    inertia: float        # sum of squared distances to assigned centroids


def farthest_point_sample(x, m: int, start: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot pick {m} of {n} points")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range for {n} points")
    return _k.fps_indices(x, m, start)


def _hard_labels(x, u):
    return np.argmin(tensorops.pairwise_sqdist(x, u), axis=1)


def lloyd_kmeans(x, m: int, iters: int, init) -> KMeansResult:
    """Classic alternation from explicit seed indices. Runs exactly
    `iters` rounds; iters=0 returns the seeds untouched."""
    x = np.asarray(x, dtype=np.float64)
    init = np.asarray(init, dtype=np.intp)
    if init.shape != (m,):
        raise ValueError(f"need {m} init indices, got shape {init.shape}")
    if init.size and (init.min() < 0 or init.max() >= x.shape[0]):
        raise ValueError("init index out of range")
    u = x[init].copy()
    for _ in range(iters):
        labels = _hard_labels(x, u)
        for j in range(m):
            members = labels == j
            if members.any():
                u[j] = x[members].mean(axis=0)
            # empty cluster: previous centroid stands
    labels = _hard_labels(x, u)
    weights = np.zeros((x.shape[0], m))
    weights[np.arange(x.shape[0]), labels] = 1.0
    d = tensorops.pairwise_sqdist(x, u)
    inertia = float(d[np.arange(x.shape[0]), labels].sum())
    return KMeansResult(centroids=u,
                        assignment=ClusterAssignment(labels, weights),
                        inertia=inertia)


def assign(x, u, kernel=None, alpha: float = 1.0) -> ClusterAssignment:
    """Soft responsibilities of each input over the centroids (rows sum to
    one) plus the argmax hard label."""
    kernel = kernel or attention.NegHalfSquaredDistance()
    w = attention.similarity_matrix(x, u, kernel, alpha, axis="centroids")
    return ClusterAssignment(labels=np.argmax(w, axis=1), weights=w)
