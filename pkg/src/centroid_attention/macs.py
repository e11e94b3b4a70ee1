"""Exact multiply-accumulate counts for encoder stacks.

Convention (everything else is excluded: embeddings, softmax
exponentials, layer norms, residual adds):

- attention layer producing n rows against n_keys rows of width d:
  query/key/value projections 3*n*d^2, score matrix n*n_keys*d, weighted
  sum n*n_keys*d, output projection n*d^2
- feed-forward on n rows: 2*n*d*d_ff
- a centroid layer shrinking N tokens to M counts with n=M, n_keys=N,
  plus its initializer: random sampling is free, mean pooling touches
  every input once (N*d), farthest-point and learned-linear mixing both
  form M x N interactions (N*M*d)

Counts are exact Python integers; totals are sums of the per-layer rows.
The absolute numbers are convention-dependent by nature, so comparisons
should always be ratios under the same convention.
"""

from dataclasses import dataclass, field

_INIT_KINDS = ("random", "mean-pool", "fps", "learned-linear")


@dataclass
class EncoderShape:
    """Architecture descriptor: `depth` attention+FFN layers at width
    `d_model`; `ca_at` maps 1-based layer positions to the centroid count
    that layer emits."""
    depth: int = 4
    d_model: int = 512
    d_ff: int = 2048                       # 0 disables the FFN term
    ca_at: dict = field(default_factory=dict)
    ca_init: str = "random"

    def validate(self, n: int):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.d_model < 1:
            raise ValueError(f"d_model must be >= 1, got {self.d_model}")
        if self.d_ff < 0:
            raise ValueError(f"d_ff must be >= 0, got {self.d_ff}")
        if self.ca_init not in _INIT_KINDS:
            raise ValueError(f"ca_init must be one of {_INIT_KINDS}, got {self.ca_init!r}")
        if n < 1:
            raise ValueError(f"token count must be >= 1, got {n}")
        live = n
        for pos in sorted(self.ca_at):
            if not 1 <= pos <= self.depth:
                raise ValueError(f"ca_at position {pos} outside 1..{self.depth}")
            m = self.ca_at[pos]
            if not 1 <= m <= live:
                raise ValueError(
                    f"layer {pos}: cannot emit {m} centroids from {live} tokens")
            live = m


@dataclass
class LayerMacs:
    name: str
    tokens: int     # rows produced
    keys: int       # rows attended over
    macs: int


@dataclass
class MacReport:
    layers: list[LayerMacs]
    total: int
    descriptor: dict

    def to_text(self) -> str:
        lines = [f"{'layer':<14} {'tokens':>7} {'keys':>6} {'macs':>14}"]
        for l in self.layers:
            lines.append(f"{l.name:<14} {l.tokens:>7} {l.keys:>6} {l.macs:>14}")
        lines.append(f"{'total':<14} {'':>7} {'':>6} {self.total:>14}")
        return "\n".join(lines)


def attention_macs(n: int, n_keys: int, d: int) -> int:
    return 3 * n * d * d + n * n_keys * d + n * n_keys * d + n * d * d


def ffn_macs(n: int, d: int, d_ff: int) -> int:
    return 2 * n * d * d_ff


def initializer_macs(kind: str, n: int, m: int, d: int) -> int:
    if kind == "random":
        return 0
    if kind == "mean-pool":
        return n * d
    if kind in ("fps", "learned-linear"):
        return n * m * d
    raise ValueError(f"unknown initializer {kind!r}")


def mac_count(arch: EncoderShape, n: int) -> MacReport:
    arch.validate(n)
    d = arch.d_model
    layers: list[LayerMacs] = []
    live = n
    for pos in range(1, arch.depth + 1):
        if pos in arch.ca_at:
            m = arch.ca_at[pos]
            init = initializer_macs(arch.ca_init, live, m, d)
            if init:
                layers.append(LayerMacs(f"layer{pos}.init", m, live, init))
            layers.append(LayerMacs(f"layer{pos}.attn", m, live,
                                    attention_macs(m, live, d)))
            out_tokens = m
        else:
            layers.append(LayerMacs(f"layer{pos}.attn", live, live,
                                    attention_macs(live, live, d)))
            out_tokens = live
        if arch.d_ff:
            layers.append(LayerMacs(f"layer{pos}.ffn", out_tokens, out_tokens,
                                    ffn_macs(out_tokens, d, arch.d_ff)))
        live = out_tokens
    descriptor = {
        "depth": arch.depth, "d_model": d, "d_ff": arch.d_ff,
        "n_tokens": n, "ca_at": dict(arch.ca_at), "ca_init": arch.ca_init,
        "token_schedule": _schedule(arch, n),
        "convention": "projections+scores+weighted-sum+ffn; "
                       "excludes embeddings, softmax, layer norm",
    }
    return MacReport(layers=layers, total=sum(l.macs for l in layers),
                     descriptor=descriptor)


def _schedule(arch: EncoderShape, n: int) -> list:
    live = n
    out = [live]
    for pos in range(1, arch.depth + 1):
        live = arch.ca_at.get(pos, live)
        out.append(live)
    return out


def reduction_ratio(arch: EncoderShape, n: int) -> float:
    """Total MACs of the centroid schedule over the same stack with no
    centroid layers."""
    vanilla = EncoderShape(depth=arch.depth, d_model=arch.d_model,
                           d_ff=arch.d_ff)
    return mac_count(arch, n).total / mac_count(vanilla, n).total
