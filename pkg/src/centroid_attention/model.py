"""Block stack mixing ordinary attention with centroid downsampling.

A model is declared as an embedding followed by ordered blocks (standard
attention, centroid attention that shrinks the token count from N to M,
residual MLP), a pooling head and a small classifier. Everything is
compiled once into two autodiff graphs over a shared parameter dict: one
ending at the logits, one at the cross-entropy loss, so the training loop
is pure numpy with exact gradients through all unrolled centroid steps.

Layer norm precedes every block (pre-norm) and the pooled features; this
is a stability choice of this artifact, not a claim about the mechanism.

Also here: a synthetic point-set classification task (classes are
geometric layouts of four Gaussian blobs), a plain fixed-rate gradient
descent trainer, and the iteration-count / initializer ablation runner.
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering
from .autodiff import Graph

_INITS = ("random", "fps", "mean-pool", "k-means")
_POOLS = ("mean", "max", "meanmax")


@dataclass
class SABlock:
    n_heads: int = 1
    head_dim: int | None = None   # default: embed dim
    step_size: float = 1.0


@dataclass
class CABlock:
    num_centroids: int
    num_steps: int = 1
    init: str = "fps"
    step_size: float | None = None    # default 1 / num_steps
    sharpness: float = 1.0
    head_dim: int | None = None
    tied: bool = False                # gradient-tied values instead of W_V

    def __post_init__(self):
        if self.init not in _INITS:
            raise ValueError(f"init must be one of {_INITS}, got {self.init!r}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.step_size is None:
            self.step_size = 1.0 / self.num_steps


@dataclass
class MLPBlock:
    hidden_dim: int


@dataclass
class ModelSpec:
    input_dim: int = 2
    embed_dim: int = 16
    tokens: int = 64
    n_classes: int = 3
    blocks: tuple = ()
    pool: str = "meanmax"
    classifier: tuple = (32,)
    seed: int = 0


def _descriptor(spec: ModelSpec) -> dict:
    """Plain-data summary of a spec, used for hashing and reports."""
    blocks = []
    for b in spec.blocks:
        if isinstance(b, SABlock):
            blocks.append({"kind": "sa", "heads": b.n_heads,
                           "head_dim": b.head_dim, "step": b.step_size})
        elif isinstance(b, CABlock):
            blocks.append({"kind": "ca", "m": b.num_centroids, "t": b.num_steps,
                           "init": b.init, "step": b.step_size,
                           "sharpness": b.sharpness, "tied": b.tied})
        else:
            blocks.append({"kind": "mlp", "hidden": b.hidden_dim})
    return {"input_dim": spec.input_dim, "embed_dim": spec.embed_dim,
            "tokens": spec.tokens, "n_classes": spec.n_classes,
            "blocks": blocks, "pool": spec.pool,
            "classifier": list(spec.classifier), "seed": spec.seed}


class Model:
    """Compiled stack; a pure function of its parameter dict and input."""

    def __init__(self, spec: ModelSpec):
        if spec.pool not in _POOLS:
            raise ValueError(f"pool must be one of {_POOLS}, got {spec.pool!r}")
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.token_schedule = self._plan_tokens()
        self._init_params()
        self._logits_graph, self._block_nodes = self._compile(with_loss=False)
        self._loss_graph, _ = self._compile(with_loss=True)
        self.last_token_counts: list[int] | None = None

    # ----- construction -------------------------------------------------

    def _plan_tokens(self) -> list[int]:
        live = self.spec.tokens
        schedule = [live]
        for i, b in enumerate(self.spec.blocks):
            if isinstance(b, CABlock):
                if b.num_centroids > live:
                    raise ValueError(
                        f"block {i}: {b.num_centroids} centroids from {live} tokens")
                if b.init == "mean-pool" and live % b.num_centroids != 0:
                    raise ValueError(
                        f"block {i}: mean-pool needs {live} tokens divisible "
                        f"by {b.num_centroids}")
                live = b.num_centroids
            schedule.append(live)
        return schedule

    def _init_params(self):
        rng = np.random.default_rng(self.spec.seed)
        d = self.spec.embed_dim

        def uni(name, fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name] = rng.uniform(-bound, bound, shape)

        uni("embed.w", self.spec.input_dim, (self.spec.input_dim, d))
        self._ca_sample_idx = {}
        live = self.spec.tokens
        for i, b in enumerate(self.spec.blocks):
            if isinstance(b, SABlock):
                dh = b.head_dim or d
                for h in range(b.n_heads):
                    uni(f"b{i}.h{h}.wq", d, (d, dh))
                    uni(f"b{i}.h{h}.wk", d, (d, dh))
                    uni(f"b{i}.h{h}.wv", d, (d, d))
            elif isinstance(b, CABlock):
                dh = b.head_dim or d
                uni(f"b{i}.wq", d, (d, dh))
                uni(f"b{i}.wk", d, (d, dh))
                if not b.tied:
                    uni(f"b{i}.wv", d, (d, d))
                if b.init == "random":
                    self._ca_sample_idx[i] = np.sort(rng.choice(
                        live, size=b.num_centroids, replace=False))
                live = b.num_centroids
            else:
                uni(f"b{i}.w1", d, (d, b.hidden_dim))
                uni(f"b{i}.b1", d, (b.hidden_dim,))
                uni(f"b{i}.w2", b.hidden_dim, (b.hidden_dim, d))
                uni(f"b{i}.b2", b.hidden_dim, (d,))
        fan = 2 * d if self.spec.pool == "meanmax" else d
        for k, width in enumerate(list(self.spec.classifier) + [self.spec.n_classes]):
            uni(f"head{k}.w", fan, (fan, width))
            uni(f"head{k}.b", fan, (width,))
            fan = width

    def _ca_initial_centroids(self, g, xn, i, b):
        m = b.num_centroids
        if b.init == "random":
            return g.gather_rows(xn, indices=self._ca_sample_idx[i])
        if b.init == "fps":
            def pick(xv):
                start = int(np.lexsort(xv.T[::-1])[0])
                return clustering.farthest_point_sample(xv, m, start)
            return g.gather_rows(xn, index_fn=pick)
        if b.init == "mean-pool":
            n = self.token_schedule[i]
            stride = n // m
            pool = np.zeros((m, n))
            for j in range(m):
                pool[j, j * stride:(j + 1) * stride] = 1.0 / stride
            return g.mix_rows(xn, weights=pool)
        # k-means: replay Lloyd as a mixing matrix so U = W X exactly,
        # treating the memberships as a constant selection
        def kmeans_mix(xv):
            start = int(np.lexsort(xv.T[::-1])[0])
            seeds = clustering.farthest_point_sample(xv, m, start)
            w = np.zeros((m, xv.shape[0]))
            w[np.arange(m), seeds] = 1.0
            for _ in range(3):
                u = w @ xv
                labels = np.argmin(
                    ((xv[:, None, :] - u[None, :, :]) ** 2).sum(-1), axis=1)
                for j in range(m):
                    members = labels == j
                    if members.any():
                        w[j] = members / members.sum()
            return w
        return g.mix_rows(xn, weight_fn=kmeans_mix)

    def _compile(self, with_loss: bool):
        spec = self.spec
        g = Graph(self.params)
        h = g.matmul(g.input("x"), g.parameter("embed.w"))
        block_nodes = [h]
        for i, b in enumerate(spec.blocks):
            xn = g.layer_norm(h)
            if isinstance(b, SABlock):
                dh = b.head_dim or spec.embed_dim
                mixed = None
                for j in range(b.n_heads):
                    q = g.matmul(xn, g.parameter(f"b{i}.h{j}.wq"))
                    k = g.matmul(xn, g.parameter(f"b{i}.h{j}.wk"))
                    w = g.row_softmax(g.matmul(q, k, tb=True), 1.0 / np.sqrt(dh))
                    out = g.matmul(w, g.matmul(xn, g.parameter(f"b{i}.h{j}.wv")))
                    mixed = out if mixed is None else g.add(mixed, out)
                h = g.add(h, g.scale(mixed, b.step_size))
            elif isinstance(b, CABlock):
                dh = b.head_dim or spec.embed_dim
                kern_scale = 1.0 / np.sqrt(dh)
                kx = g.matmul(xn, g.parameter(f"b{i}.wk"))
                u = self._ca_initial_centroids(g, xn, i, b)
                for _ in range(b.num_steps):
                    qu = g.matmul(u, g.parameter(f"b{i}.wq"))
                    phi = g.matmul(kx, qu, tb=True)           # (N, M) raw scores
                    w = g.row_softmax(phi, b.sharpness * kern_scale)
                    if b.tied:
                        inc = g.scale(g.matmul(g.matmul(w, kx, ta=True),
                                               g.parameter(f"b{i}.wq"), tb=True),
                                      kern_scale)
                    else:
                        inc = g.matmul(w, g.matmul(xn, g.parameter(f"b{i}.wv")),
                                       ta=True)
                    u = g.add(u, g.scale(inc, b.step_size))
                h = u
            else:
                z = g.leaky_relu(g.add(g.matmul(xn, g.parameter(f"b{i}.w1")),
                                       g.parameter(f"b{i}.b1")))
                h = g.add(h, g.add(g.matmul(z, g.parameter(f"b{i}.w2")),
                                   g.parameter(f"b{i}.b2")))
            block_nodes.append(h)
        hn = g.layer_norm(h)
        if spec.pool == "mean":
            pooled = g.mean(hn, axis=0)
        elif spec.pool == "max":
            pooled = g.token_max(hn)
        else:
            pooled = g.concat(g.mean(hn, axis=0), g.token_max(hn))
        r = g.as_row(pooled)
        n_layers = len(spec.classifier) + 1
        for k in range(n_layers):
            r = g.add(g.matmul(r, g.parameter(f"head{k}.w")),
                      g.parameter(f"head{k}.b"))
            if k < n_layers - 1:
                r = g.leaky_relu(r)
        if with_loss:
            picked = g.sum(g.mul(r, g.input("y")))
            g.add(g.sum(g.row_logsumexp(r, 1.0)), g.neg(picked))
        return g, block_nodes

    # ----- execution ----------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.spec.tokens, self.spec.input_dim):
            raise ValueError(
                f"model compiled for input {(self.spec.tokens, self.spec.input_dim)}, "
                f"got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        logits = self._logits_graph.forward({"x": self._check_input(x)})[0]
        vals = self._logits_graph._values
        self.last_token_counts = [vals[n].shape[0] for n in self._block_nodes]
        return logits

    def predict(self, x) -> int:
        return int(np.argmax(self.forward(x)))

    def loss_and_grads(self, x, label: int):
        y = np.zeros((1, self.spec.n_classes))
        y[0, label] = 1.0
        loss = float(self._loss_graph.forward({"x": self._check_input(x), "y": y}))
        return loss, self._loss_graph.backward(1.0)

    def descriptor(self) -> dict:
        return _descriptor(self.spec)


def build_model(spec: ModelSpec) -> Model:
    return Model(spec)


def forward(model: Model, x) -> np.ndarray:
    return model.forward(x)


def default_spec(seed: int = 0) -> ModelSpec:
    """The stock demo stack: attention, an 8-centroid downsampling block,
    attention again, then pooled classification."""
    return ModelSpec(blocks=(SABlock(), CABlock(num_centroids=8, init="fps"),
                             SABlock()), seed=seed)


# ----- synthetic task ---------------------------------------------------

# Class = spatial layout of four blob centers (square, line, cross, pairs).
_LAYOUTS = (
    np.array([[1.4, 1.4], [-1.4, 1.4], [-1.4, -1.4], [1.4, -1.4]]),
    np.array([[-2.1, 0.0], [-0.7, 0.0], [0.7, 0.0], [2.1, 0.0]]),
    np.array([[0.0, 2.0], [2.0, 0.0], [0.0, -2.0], [-2.0, 0.0]]),
    np.array([[-2.0, -2.0], [-1.2, -1.2], [1.2, 1.2], [2.0, 2.0]]),
)


@dataclass
class SynthConfig:
    n_points: int = 64
    n_classes: int = 3
    spread: float = 0.1
    samples_per_class: int = 50
    seed: int = 0


@dataclass
class SynthDataset:
    train: list
    test: list
    config: SynthConfig


def synth_dataset(cfg: SynthConfig) -> SynthDataset:
    """Point-set samples whose class is the blob layout. Points are drawn
    blob-round-robin then shuffled so ordering carries no signal; split is
    80/20 per class, deterministic from the seed."""
    if cfg.n_classes < 2 or cfg.n_classes > len(_LAYOUTS):
        raise ValueError(f"n_classes must be in [2, {len(_LAYOUTS)}], got {cfg.n_classes}")
    if cfg.n_points < 4:
        raise ValueError(f"need at least 4 points per sample, got {cfg.n_points}")
    if cfg.spread < 0:
        raise ValueError(f"spread must be nonnegative, got {cfg.spread}")
    rng = np.random.default_rng(cfg.seed)
    train, test = [], []
    n_test = max(1, round(0.2 * cfg.samples_per_class))
    for label in range(cfg.n_classes):
        centers = _LAYOUTS[label]
        for s in range(cfg.samples_per_class):
            blob = np.arange(cfg.n_points) % 4
            pts = centers[blob] + cfg.spread * rng.standard_normal((cfg.n_points, 2))
            pts = pts[rng.permutation(cfg.n_points)]
            target = test if s < n_test else train
            target.append((pts, label))
    return SynthDataset(train=train, test=test, config=cfg)


def layout_oracle_accuracy(samples, n_classes: int) -> float:
    """Nearest-layout baseline: score each sample against every class's
    blob centers by summed point-to-nearest-center distance. Establishes
    the task's achievable accuracy independent of any model."""
    hits = 0
    for pts, label in samples:
        scores = []
        for c in range(n_classes):
            d = ((pts[:, None, :] - _LAYOUTS[c][None, :, :]) ** 2).sum(-1)
            scores.append(d.min(axis=1).sum())
        hits += int(np.argmin(scores) == label)
    return hits / len(samples)


# ----- training ---------------------------------------------------------

@dataclass
class TrainHyper:
    lr: float = 0.05
    epochs: int = 50
    batch: int = 8
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    config_hash: str = ""

    def final_test_acc(self) -> float:
        return self.epochs[-1].test_acc if self.epochs else 0.0

    def to_lines(self) -> list[str]:
        """One structured record per epoch. Wall time is deliberately left
        out so identical seeds serialize byte-identically."""
        lines = []
        for e in self.epochs:
            lines.append(json.dumps({
                "epoch": e.epoch, "loss": round(e.loss, 10),
                "train_acc": round(e.train_acc, 6), "test_acc": round(e.test_acc, 6),
                "seed": self.seed, "config": self.config_hash}))
        return lines


def config_hash(model: Model, hyper: TrainHyper) -> str:
    blob = json.dumps({"spec": model.descriptor(),
                       "hyper": [hyper.lr, hyper.epochs, hyper.batch, hyper.seed]},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def accuracy(model: Model, samples) -> float:
    if not samples:
        return 0.0
    return sum(model.predict(x) == y for x, y in samples) / len(samples)


def train(model: Model, data: SynthDataset, hyper: TrainHyper) -> TrainReport:
    """Plain gradient descent on cross-entropy, fixed rate, seeded
    shuffling. Loss per epoch is the mean over training samples as
    visited (pre-update within each batch)."""
    rng = np.random.default_rng(hyper.seed)
    chash = config_hash(model, hyper)
    report = TrainReport(seed=hyper.seed, config_hash=chash)
    t0 = time.perf_counter()
    n = len(data.train)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, hyper.batch):
            batch = order[lo:lo + hyper.batch]
            acc_grads: dict[str, np.ndarray] = {}
            for idx in batch:
                x, label = data.train[idx]
                loss, grads = model.loss_and_grads(x, label)
                epoch_loss += loss
                for name, grad in grads.items():
                    if name in acc_grads:
                        acc_grads[name] += grad
                    else:
                        acc_grads[name] = grad.copy()
            for name, grad in acc_grads.items():
                model.params[name] -= hyper.lr * grad / len(batch)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise RuntimeError(f"non-finite loss at epoch {epoch} (config {chash})")
        report.epochs.append(EpochStats(
            epoch=epoch, loss=epoch_loss,
            train_acc=accuracy(model, data.train),
            test_acc=accuracy(model, data.test)))
    report.wall_time = time.perf_counter() - t0
    return report


# ----- ablation ---------------------------------------------------------

@dataclass
class AblationRow:
    setting: str
    test_acc: float
    train_acc: float
    throughput: float    # forward passes per second on the test split


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow]

    def to_text(self) -> str:
        lines = [f"{'setting':<12} {'test_acc':>9} {'train_acc':>10} {'fwd/s':>10}"]
        for r in self.rows:
            lines.append(f"{r.setting:<12} {r.test_acc:>9.3f} "
                         f"{r.train_acc:>10.3f} {r.throughput:>10.1f}")
        return "\n".join(lines)


def eval_throughput(model: Model, samples, reps: int = 5) -> float:
    """Forward passes per second, best of `reps` sweeps (min wall time is
    the noise-robust summary for a deterministic workload)."""
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        for x, _ in samples:
            model.forward(x)
        best = min(best, time.perf_counter() - t0)
    return len(samples) / best


def _with_ca(spec: ModelSpec, **changes) -> ModelSpec:
    blocks = tuple(replace(b, **changes) if isinstance(b, CABlock) else b
                   for b in spec.blocks)
    return replace(spec, blocks=blocks)


def ablate(data: SynthDataset, base_spec: ModelSpec, axis: str,
           hyper: TrainHyper | None = None, workers: int = 1) -> AblationTable:
    """Sweep iteration count or initializer over otherwise-identical runs
    (same seeds, same budget). Settings may train on separate threads;
    rows keep the declared order either way."""
    hyper = hyper or TrainHyper()
    if axis == "T":
        settings = [("T=1", _with_ca(base_spec, num_steps=1, step_size=None)),
                    ("T=2", _with_ca(base_spec, num_steps=2, step_size=None)),
                    ("T=3", _with_ca(base_spec, num_steps=3, step_size=None))]
    elif axis == "init":
        settings = [(name, _with_ca(base_spec, init=name)) for name in _INITS]
    else:
        raise ValueError(f"axis must be 'T' or 'init', got {axis!r}")

    def run(item):
        name, spec = item
        model = build_model(spec)
        report = train(model, data, hyper)
        return AblationRow(setting=name,
                           test_acc=report.final_test_acc(),
                           train_acc=report.epochs[-1].train_acc,
                           throughput=eval_throughput(model, data.test))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, settings))
    else:
        rows = [run(s) for s in settings]
    return AblationTable(axis=axis, rows=rows)
