"""Minimal reverse-mode differentiation over the tensor primitives.

A Graph is built lazily: `input`/`parameter`/`constant` create leaves, op
methods append records, nothing is evaluated until `forward`. Node inputs
always refer to earlier nodes, so construction order is the topological
order and `backward` is a single reverse sweep.

Parameters live in a plain dict that the graph reads at forward time, so
one parameter store can be shared by many graphs (the training loop builds
a fresh graph per sample) and an optimizer can update arrays between
passes.

The op set is the closure needed by the attention/centroid updates and the
block stack: matmul (with transpose flags), add, elementwise mul, scalar
scale, negation, row softmax, row logsumexp, pairwise squared distance,
sum/mean, token-axis max, leaky relu, layer norm, vector concat, and a
row-gather whose indices may be computed from the forward value (used by
sampling initializers; the selection itself gets no gradient).
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensorops


@dataclass
class _Node:
    kind: str
    inputs: tuple
    attrs: dict = field(default_factory=dict)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Graph:
    """Lazily-built computation graph over float64 arrays."""

    def __init__(self, params: dict | None = None):
        self.nodes: list[_Node] = []
        self.params = params if params is not None else {}
        self._values = None
        self._dyn_idx = {}
        self._output = None

    # ----- leaves -------------------------------------------------------

    def _push(self, kind, inputs=(), **attrs) -> int:
        self.nodes.append(_Node(kind, tuple(inputs), attrs))
        self._output = len(self.nodes) - 1
        return self._output

    def input(self, name: str) -> int:
        return self._push("input", name=name)

    def parameter(self, name: str, value=None) -> int:
        """Trainable leaf. If `value` is given it is stored into the shared
        parameter dict; otherwise the name must already be present there at
        forward time."""
        if value is not None:
            self.params[name] = np.asarray(value, dtype=np.float64)
        return self._push("param", name=name)

    def constant(self, value) -> int:
        return self._push("const", value=np.asarray(value, dtype=np.float64))

    # ----- ops ----------------------------------------------------------

    def add(self, a, b):
        return self._push("add", (a, b))

    def mul(self, a, b):
        return self._push("mul", (a, b))

    def scale(self, a, c: float):
        return self._push("scale", (a,), c=float(c))

    def neg(self, a):
        return self._push("neg", (a,))

    def matmul(self, a, b, ta=False, tb=False):
        return self._push("matmul", (a, b), ta=ta, tb=tb)

    def row_softmax(self, a, scale: float = 1.0):
        return self._push("row_softmax", (a,), scale=float(scale))

    def row_logsumexp(self, a, alpha: float = 1.0):
        return self._push("row_logsumexp", (a,), alpha=float(alpha))

    def sqdist(self, x, u):
        return self._push("sqdist", (x, u))

    def sum(self, a, axis=None):
        return self._push("sum", (a,), axis=axis)

    def mean(self, a, axis=None):
        return self._push("mean", (a,), axis=axis)

    def token_max(self, a):
        """Column-wise max over the token axis (axis 0); ties route the
        gradient to the lowest row index."""
        return self._push("token_max", (a,))

    def leaky_relu(self, a, slope: float = 0.2):
        return self._push("leaky_relu", (a,), slope=float(slope))

    def layer_norm(self, a, eps: float = 1e-5):
        return self._push("layer_norm", (a,), eps=float(eps))

    def concat(self, a, b):
        return self._push("concat", (a, b))

    def gather_rows(self, a, indices=None, index_fn=None):
        """Select rows of a. `indices` is a fixed index array; `index_fn`
        computes indices from the forward value instead (cached for the
        backward sweep)."""
        if (indices is None) == (index_fn is None):
            raise ValueError("gather_rows needs exactly one of indices / index_fn")
        if indices is not None:
            indices = np.asarray(indices, dtype=np.intp)
        return self._push("gather_rows", (a,), indices=indices, index_fn=index_fn)

    def mix_rows(self, a, weights=None, weight_fn=None):
        """Output W @ a for a mixing matrix W that is either fixed or
        computed from the forward value. W itself is treated as a constant
        selection (no gradient through its construction), matching the
        semantics of gather_rows for fractional memberships."""
        if (weights is None) == (weight_fn is None):
            raise ValueError("mix_rows needs exactly one of weights / weight_fn")
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
        return self._push("mix_rows", (a,), weights=weights, weight_fn=weight_fn)

    def as_row(self, a):
        """Promote a vector to a 1 x n matrix."""
        return self._push("as_row", (a,))

    # ----- execution ----------------------------------------------------

    def forward(self, inputs: dict | None = None) -> np.ndarray:
        """Evaluate every node in order; returns the root (last) output."""
        inputs = inputs or {}
        vals = [None] * len(self.nodes)
        self._dyn_idx.clear()
        for i, node in enumerate(self.nodes):
            a = node.attrs
            v = [vals[j] for j in node.inputs]
            if node.kind == "input":
                if a["name"] not in inputs:
                    raise KeyError(f"unbound graph input {a['name']!r}")
                vals[i] = np.asarray(inputs[a["name"]], dtype=np.float64)
            elif node.kind == "param":
                if a["name"] not in self.params:
                    raise KeyError(f"unbound parameter {a['name']!r}")
                vals[i] = np.asarray(self.params[a["name"]], dtype=np.float64)
            elif node.kind == "const":
                vals[i] = a["value"]
            elif node.kind == "add":
                vals[i] = v[0] + v[1]
            elif node.kind == "mul":
                vals[i] = v[0] * v[1]
            elif node.kind == "scale":
                vals[i] = a["c"] * v[0]
            elif node.kind == "neg":
                vals[i] = -v[0]
            elif node.kind == "matmul":
                x = v[0].T if a["ta"] else v[0]
                y = v[1].T if a["tb"] else v[1]
                vals[i] = tensorops.matmul(x, y)
            elif node.kind == "row_softmax":
                vals[i] = tensorops.row_softmax(v[0], a["scale"])
            elif node.kind == "row_logsumexp":
                vals[i] = tensorops.row_logsumexp(v[0], a["alpha"])
            elif node.kind == "sqdist":
                vals[i] = tensorops.pairwise_sqdist(v[0], v[1])
            elif node.kind == "sum":
                vals[i] = v[0].sum(axis=a["axis"])
            elif node.kind == "mean":
                vals[i] = v[0].mean(axis=a["axis"])
            elif node.kind == "token_max":
                vals[i] = v[0].max(axis=0)
            elif node.kind == "leaky_relu":
                vals[i] = np.where(v[0] > 0, v[0], a["slope"] * v[0])
            elif node.kind == "layer_norm":
                mu = v[0].mean(axis=-1, keepdims=True)
                var = ((v[0] - mu) ** 2).mean(axis=-1, keepdims=True)
                vals[i] = (v[0] - mu) / np.sqrt(var + a["eps"])
            elif node.kind == "concat":
                vals[i] = np.concatenate([v[0], v[1]])
            elif node.kind == "gather_rows":
                idx = a["indices"]
                if idx is None:
                    idx = np.asarray(a["index_fn"](v[0]), dtype=np.intp)
                self._dyn_idx[i] = idx
                vals[i] = v[0][idx]
            elif node.kind == "mix_rows":
                w = a["weights"]
                if w is None:
                    w = np.asarray(a["weight_fn"](v[0]), dtype=np.float64)
                self._dyn_idx[i] = w
                vals[i] = w @ v[0]
            elif node.kind == "as_row":
                vals[i] = v[0][None, :]
            else:
                raise ValueError(f"unknown op kind {node.kind!r}")
        self._values = vals
        return vals[self._output]

    def backward(self, seed) -> dict:
        """Gradients of seed.T @ output w.r.t. every parameter, as a dict
        name -> array. Requires a prior forward pass."""
        if self._values is None:
            raise RuntimeError("backward called before forward")
        vals = self._values
        adj = [None] * len(self.nodes)
        out = self._output
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != np.shape(vals[out]):
            raise ValueError(
                f"seed shape {seed.shape} does not match output {np.shape(vals[out])}")
        adj[out] = seed
        grads: dict[str, np.ndarray] = {}

        def acc(j, g):
            if adj[j] is None:
                adj[j] = np.array(g, dtype=np.float64)
            else:
                adj[j] = adj[j] + g

        for i in range(len(self.nodes) - 1, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self.nodes[i]
            a = node.attrs
            v = [vals[j] for j in node.inputs]
            if node.kind == "param":
                name = a["name"]
                grads[name] = grads.get(name, 0.0) + g
            elif node.kind in ("input", "const"):
                pass
            elif node.kind == "add":
                acc(node.inputs[0], _unbroadcast(g, v[0].shape))
                acc(node.inputs[1], _unbroadcast(g, v[1].shape))
            elif node.kind == "mul":
                acc(node.inputs[0], _unbroadcast(g * v[1], v[0].shape))
                acc(node.inputs[1], _unbroadcast(g * v[0], v[1].shape))
            elif node.kind == "scale":
                acc(node.inputs[0], a["c"] * g)
            elif node.kind == "neg":
                acc(node.inputs[0], -g)
            elif node.kind == "matmul":
                x = v[0].T if a["ta"] else v[0]
                y = v[1].T if a["tb"] else v[1]
                gx = g @ y.T
                gy = x.T @ g
                acc(node.inputs[0], gx.T if a["ta"] else gx)
                acc(node.inputs[1], gy.T if a["tb"] else gy)
            elif node.kind == "row_softmax":
                s = vals[i]
                inner = (g * s).sum(axis=-1, keepdims=True)
                acc(node.inputs[0], a["scale"] * s * (g - inner))
            elif node.kind == "row_logsumexp":
                w = tensorops.row_softmax(v[0], a["alpha"])
                acc(node.inputs[0], g[..., None] * w)
            elif node.kind == "sqdist":
                x, u = v
                acc(node.inputs[0], 2.0 * (g.sum(axis=1)[:, None] * x - g @ u))
                acc(node.inputs[1], 2.0 * (g.sum(axis=0)[:, None] * u - g.T @ x))
            elif node.kind == "sum":
                acc(node.inputs[0], _spread(g, v[0].shape, a["axis"]))
            elif node.kind == "mean":
                ax = a["axis"]
                n = v[0].size if ax is None else v[0].shape[ax]
                acc(node.inputs[0], _spread(g, v[0].shape, ax) / n)
            elif node.kind == "token_max":
                idx = v[0].argmax(axis=0)
                gx = np.zeros_like(v[0])
                gx[idx, np.arange(v[0].shape[1])] = g
                acc(node.inputs[0], gx)
            elif node.kind == "leaky_relu":
                acc(node.inputs[0], g * np.where(v[0] > 0, 1.0, a["slope"]))
            elif node.kind == "layer_norm":
                mu = v[0].mean(axis=-1, keepdims=True)
                var = ((v[0] - mu) ** 2).mean(axis=-1, keepdims=True)
                inv = 1.0 / np.sqrt(var + a["eps"])
                xhat = vals[i]
                n = v[0].shape[-1]
                gsum = g.sum(axis=-1, keepdims=True)
                xg = (g * xhat).sum(axis=-1, keepdims=True)
                acc(node.inputs[0], (inv / n) * (n * g - gsum - xhat * xg))
            elif node.kind == "concat":
                k = v[0].shape[0]
                acc(node.inputs[0], g[:k])
                acc(node.inputs[1], g[k:])
            elif node.kind == "gather_rows":
                idx = a["indices"] if a["indices"] is not None else self._dyn_idx[i]
                gx = np.zeros_like(v[0])
                np.add.at(gx, idx, g)
                acc(node.inputs[0], gx)
            elif node.kind == "mix_rows":
                w = a["weights"] if a["weights"] is not None else self._dyn_idx[i]
                acc(node.inputs[0], w.T @ g)
            elif node.kind == "as_row":
                acc(node.inputs[0], g[0])
        return grads


@dataclass
class FDReport:
    """Result of comparing an analytic gradient against central differences."""
    max_abs_err: float
    max_rel_err: float
    passed: bool
    worst_index: tuple


def finite_diff_check(f, x, analytic_grad, step: float = 1e-5,
                      tol: float = 1e-6) -> FDReport:
    """Central-difference check of a scalar function's gradient.

    Per coordinate: numeric = (f(x + h e) - f(x - h e)) / 2h. An entry
    passes if its relative error is <= tol; entries whose magnitude sits
    at or below 10 h^2 fall back to that same absolute bound, since
    near-zero values cannot be certified relatively.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != point shape {x.shape}")
    abs_floor = 10.0 * step * step
    max_abs = 0.0
    max_rel = 0.0
    passed = True
    worst = ()
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {idx}")
        numeric = (fp - fm) / (2.0 * step)
        abs_err = abs(numeric - analytic[idx])
        max_abs = max(max_abs, abs_err)
        denom = max(abs(numeric), abs(analytic[idx]))
        if denom <= abs_floor and abs_err <= abs_floor:
            continue    # near-zero entry agreeing at the method's resolution
        rel = abs_err / denom if denom > 0 else np.inf
        if rel > max_rel:
            max_rel = rel
            worst = idx
        if rel > tol:
            passed = False
    return FDReport(max_abs_err=float(max_abs), max_rel_err=float(max_rel),
                    passed=passed, worst_index=worst)


def _spread(g, shape, axis):
    """Broadcast a summed gradient back to `shape`."""
    if axis is None:
        return np.broadcast_to(g, shape)
    g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)
