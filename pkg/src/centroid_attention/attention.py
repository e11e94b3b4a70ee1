"""Attention built from iterative centroid refinement.

The core update moves M centroid rows by one gradient-ascent step on a
soft assignment score against N fixed input rows. With a dot-product
similarity, decoupled values, one step, identity initialization and
per-centroid normalization, the update is exactly one round of standard
query/key/value attention; `self_attention` below is that special case
written directly.

Normalization axis matters and both conventions are supported:

- "centroids": each input row gets a distribution over centroids (the
  clustering view; rows of the N x M weight matrix sum to 1).
- "inputs": each centroid gets a distribution over inputs (the attention
  view; columns sum to 1).

Weights can be restricted to each centroid's k nearest inputs via
`knn_mask`; surviving entries are renormalized along the configured axis.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels as _k
from . import tensorops

_AXES = ("centroids", "inputs")


def _check_axis(axis):
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")


class NegHalfSquaredDistance:
    """Similarity -0.5 * ||x_i - u_j||^2. Gradient-tied values pull each
    centroid toward its weighted inputs, recovering the classic soft
    k-means mean update when the weights row-normalize over centroids."""

    def phi_matrix(self, x, u):
        return -0.5 * tensorops.pairwise_sqdist(x, u)

    def tied_increment(self, x, u, w):
        # sum_i w_ij (x_i - u_j) = (W^T X)_j - (sum_i w_ij) u_j
        return w.T @ x - w.sum(axis=0)[:, None] * u

    def tied_increment_sparse(self, x, u, w, idx):
        return _k.gather_weighted_sum(w, idx, x) - w.sum(axis=1)[:, None] * u

    def phi_rows(self, x, u, idx):
        """phi restricted to neighbor lists: out[j, t] = phi(x[idx[j, t]], u_j)."""
        diff = x[idx] - u[:, None, :]
        return -0.5 * np.einsum("mkd,mkd->mk", diff, diff)


class ScaledDotProduct:
    """Similarity s * (u_j Wq) . (x_i Wk), the transformer kernel. The
    gradient in u does not depend on u, so the tied value of input i is
    s * Wq (x_i Wk)."""

    def __init__(self, w_query, w_key, scale=None):
        self.w_query = np.asarray(w_query, dtype=np.float64)
        self.w_key = np.asarray(w_key, dtype=np.float64)
        if self.w_query.shape != self.w_key.shape:
            raise ValueError(
                f"query/key maps disagree: {self.w_query.shape} vs {self.w_key.shape}")
        self.scale = float(scale) if scale is not None else 1.0 / np.sqrt(
            self.w_key.shape[1])

    def phi_matrix(self, x, u):
        return self.scale * (x @ self.w_key) @ (u @ self.w_query).T

    def tied_increment(self, x, u, w):
        return self.scale * (w.T @ (x @ self.w_key)) @ self.w_query.T

    def tied_increment_sparse(self, x, u, w, idx):
        keys = x @ self.w_key
        return self.scale * _k.gather_weighted_sum(w, idx, keys) @ self.w_query.T

    def phi_rows(self, x, u, idx):
        keys = x @ self.w_key
        queries = u @ self.w_query
        return self.scale * np.einsum("mkd,md->mk", keys[idx], queries)


@dataclass
class KnnMask:
    """Per-centroid neighbor lists. `indices[j]` holds the k input rows
    closest to centroid j in squared L2, ascending, ties to the lower
    index. `clamped` flags a request for more neighbors than inputs."""
    indices: np.ndarray
    clamped: bool = False

    def dense(self, n: int) -> np.ndarray:
        keep = np.zeros((n, self.indices.shape[0]), dtype=bool)
        m = self.indices.shape[0]
        for j in range(m):
            keep[self.indices[j], j] = True
        return keep


def knn_mask(x, u, k: int) -> KnnMask:
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if k <= 0:
        raise ValueError(f"neighbor count must be positive, got {k}")
    n = x.shape[0]
    clamped = k > n
    idx = _k.knn_indices(x, u, min(k, n))
    return KnnMask(indices=idx, clamped=clamped)


@dataclass
class CentroidAttentionConfig:
    num_centroids: int
    kernels: tuple = field(default_factory=lambda: (NegHalfSquaredDistance(),))
    values: tuple | None = None          # per-kernel W_V, None entry = gradient-tied
    num_steps: int = 1
    step_size: float | None = None       # default 1 / num_steps
    sharpness: float = 1.0
    norm_axis: str = "centroids"
    initializer: object | None = None    # None = copy inputs (needs M == N)
    knn_k: int | None = None

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.sharpness <= 0:
            raise ValueError(f"sharpness must be positive, got {self.sharpness}")
        _check_axis(self.norm_axis)
        if self.values is not None and len(self.values) != len(self.kernels):
            raise ValueError("values must align one-to-one with kernels")
        if self.step_size is None:
            self.step_size = 1.0 / self.num_steps


def similarity_matrix(x, u, kernel, alpha: float = 1.0,
                      axis: str = "centroids", mask=None) -> np.ndarray:
    """Normalized attention weights, shape (N, M). Entry [i, j] couples
    input i and centroid j. Masked-out entries are exactly zero; the
    survivors renormalize along `axis`. A fully masked row or column
    stays all-zero."""
    _check_axis(axis)
    if alpha <= 0:
        raise ValueError(f"sharpness must be positive, got {alpha}")
    phi = kernel.phi_matrix(np.asarray(x, dtype=np.float64),
                            np.asarray(u, dtype=np.float64))
    keep = None
    if mask is not None:
        keep = mask.dense(phi.shape[0]) if isinstance(mask, KnnMask) else np.asarray(mask, dtype=bool)
        if keep.shape != phi.shape:
            raise ValueError(f"mask shape {keep.shape} != similarity shape {phi.shape}")
    return _masked_softmax(phi, alpha, axis, keep)


def _masked_softmax(phi, alpha, axis, keep):
    ax = 1 if axis == "centroids" else 0
    if keep is None:
        if ax == 1:
            return tensorops.row_softmax(phi, alpha)
        return tensorops.row_softmax(phi.T, alpha).T
    neg = np.where(keep, alpha * phi, -np.inf)
    hi = neg.max(axis=ax, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)  # fully masked line: avoid inf - inf
    e = np.where(keep, np.exp(neg - hi), 0.0)
    denom = e.sum(axis=ax, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def _head_increment(x, u, kernel, w_value, weights):
    if w_value is None:
        return kernel.tied_increment(x, u, weights)
    return weights.T @ (x @ np.asarray(w_value, dtype=np.float64))


def centroid_update_step(x, u, config: CentroidAttentionConfig,
                         mask=None) -> np.ndarray:
    """One gradient-ascent step: u += step_size * sum over kernels of the
    similarity-weighted value field."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if isinstance(mask, KnnMask) and config.norm_axis == "inputs":
        return _sparse_update_step(x, u, config, mask)
    values = config.values or (None,) * len(config.kernels)
    inc = np.zeros_like(u)
    for kern, w_v in zip(config.kernels, values):
        w = similarity_matrix(x, u, kern, config.sharpness, config.norm_axis, mask)
        inc += _head_increment(x, u, kern, w_v, w)
    return u + config.step_size * inc


def _sparse_update_step(x, u, config, mask):
    """Neighbor-list path: softmax over each centroid's k survivors without
    forming the dense N x M matrix. Only valid for per-centroid ("inputs")
    normalization, where each column is self-contained."""
    idx = mask.indices
    values = config.values or (None,) * len(config.kernels)
    inc = np.zeros_like(u)
    for kern, w_v in zip(config.kernels, values):
        phi = kern.phi_rows(x, u, idx)                      # (M, k)
        w = tensorops.row_softmax(phi, config.sharpness)
        if w_v is None:
            inc += kern.tied_increment_sparse(x, u, w, idx)
        else:
            inc += _k.gather_weighted_sum(w, idx, x @ np.asarray(w_v, dtype=np.float64))
    return u + config.step_size * inc


@dataclass
class CentroidAttentionResult:
    centroids: np.ndarray        # (M, d) final positions
    trajectory: np.ndarray       # (T + 1, M, d) including the initialization
    weights: np.ndarray          # (N, M) last-step weights of the first kernel
    mask_clamped: bool = False


def centroid_attention(x, config: CentroidAttentionConfig) -> CentroidAttentionResult:
    """Initialize M centroids from the inputs, then unroll T update steps.
    The neighbor mask, if any, is rebuilt from the moved centroids before
    every step."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"inputs must be a nonempty 2-D array, got shape {x.shape}")
    n = x.shape[0]
    m = config.num_centroids
    if m > n:
        raise ValueError(f"cannot place {m} centroids from {n} inputs")
    if m < 1:
        raise ValueError(f"num_centroids must be >= 1, got {m}")
    if config.initializer is None:
        if m != n:
            raise ValueError(
                "no initializer set: identity initialization needs num_centroids == len(x)")
        u = x.copy()
    else:
        u = np.asarray(config.initializer.init(x, m), dtype=np.float64)
    traj = np.empty((config.num_steps + 1, m, x.shape[1]))
    traj[0] = u
    clamped = False
    mask = None
    for t in range(config.num_steps):
        if config.knn_k is not None:
            mask = knn_mask(x, u, config.knn_k)
            clamped = clamped or mask.clamped
        u = centroid_update_step(x, u, config, mask)
        traj[t + 1] = u
    w = similarity_matrix(x, u, config.kernels[0], config.sharpness,
                          config.norm_axis, mask)
    return CentroidAttentionResult(centroids=u, trajectory=traj, weights=w,
                                   mask_clamped=clamped)


@dataclass
class HeadParams:
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray

    def __post_init__(self):
        self.w_query = np.asarray(self.w_query, dtype=np.float64)
        self.w_key = np.asarray(self.w_key, dtype=np.float64)
        self.w_value = np.asarray(self.w_value, dtype=np.float64)


def combine_heads(per_head: list, mode: str = "sum", w_out=None) -> np.ndarray:
    """Merge per-head outputs: "sum" adds them (each head must already be
    model-width), "concat" stacks along features and applies w_out."""
    if mode == "sum":
        out = per_head[0].copy()
        for h in per_head[1:]:
            out += h
        return out
    if mode == "concat":
        cat = np.concatenate(per_head, axis=1)
        if w_out is None:
            return cat
        return cat @ np.asarray(w_out, dtype=np.float64)
    raise ValueError(f"mode must be 'sum' or 'concat', got {mode!r}")


def self_attention(x, heads, step_size: float = 1.0, scale=None,
                   mode: str = "sum", w_out=None, residual: bool = True) -> np.ndarray:
    """Standard attention: every row attends over all rows (softmax over
    keys) and moves by step_size times the combined head outputs. With
    residual=False the mixed values are returned bare."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"inputs must be a nonempty 2-D array, got shape {x.shape}")
    outs = []
    for h in heads:
        s = float(scale) if scale is not None else 1.0 / np.sqrt(h.w_key.shape[1])
        logits = (x @ h.w_query) @ (x @ h.w_key).T * s   # [i, j] = q_i . k_j
        w = tensorops.row_softmax(logits)
        outs.append(w @ (x @ h.w_value))
    mixed = combine_heads(outs, mode, w_out)
    if not residual:
        return mixed
    return x + step_size * mixed
