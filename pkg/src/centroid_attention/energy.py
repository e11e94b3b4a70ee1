"""Energy-function view of the attention updates.

Two energies over dot products: a pairwise one coupling every row of a
sequence with every row (self terms included as written; a flag drops
them), and a bipartite one coupling N visible rows with M hidden rows.
Each comes with its simultaneous gradient-step update. With the
negative-exponential kernel the updates reproduce unnormalized attention
(exp-weighted sums with no softmax denominator); dividing the weights by
their sums afterwards recovers the normalized form, which tests assert
against the centroid update.

Note the pairwise energy counts each unordered pair twice, so its update
descends along half the true gradient; the bipartite step is exactly the
negative gradient.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class Linear:
    """zeta(s) = c * s."""
    c: float = 1.0

    def value(self, s):
        return self.c * s

    def deriv(self, s):
        return np.full_like(s, self.c)


class NegExp:
    """zeta(s) = -exp(s); its derivative makes gradient steps aggregate
    neighbors with unnormalized exponential weights."""

    def value(self, s):
        return -np.exp(s)

    def deriv(self, s):
        return -np.exp(s)


def _dots(x, u=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"need a nonempty 2-D array, got shape {x.shape}")
    if u is None:
        return x, x, x @ x.T
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise ValueError(f"need a nonempty 2-D array, got shape {u.shape}")
    if u.shape[1] != x.shape[1]:
        raise ValueError(f"feature dimensions differ: {x.shape[1]} vs {u.shape[1]}")
    return x, u, x @ u.T


def pairwise_energy(x, kernel, include_self: bool = True) -> float:
    """Sum of zeta over all ordered row pairs of x."""
    x, _, s = _dots(x)
    e = kernel.value(s)
    if not include_self:
        np.fill_diagonal(e, 0.0)
    return float(e.sum())


def pairwise_energy_step(x, kernel, step_size: float,
                         include_self: bool = True) -> np.ndarray:
    """All rows move at once against the pre-update sequence:
    x_i <- x_i - step * sum_j zeta'(x_i . x_j) x_j."""
    x, _, s = _dots(x)
    d = kernel.deriv(s)
    if not include_self:
        np.fill_diagonal(d, 0.0)
    return x - step_size * d @ x


def rbm_energy(x, u, kernel) -> float:
    """Bipartite energy between visible rows x and hidden rows u."""
    _, _, s = _dots(x, u)
    return float(kernel.value(s).sum())


def rbm_energy_step(x, u, kernel, step_size: float) -> np.ndarray:
    """Exact gradient descent on the hidden rows:
    u_j <- u_j - step * sum_i zeta'(x_i . u_j) x_i."""
    x, u, s = _dots(x, u)
    return u - step_size * kernel.deriv(s).T @ x
