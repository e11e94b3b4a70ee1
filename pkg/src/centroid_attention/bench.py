"""Wall-clock scaling harness for the attention variants.

Times one application of each variant at growing token counts: full
self-attention (every token against every token), the centroid update
with a fixed output count, and its neighbor-masked form. Inputs are
allocated and warmed up outside the timed region; each repetition times a
single call with the monotonic nanosecond clock, repetitions rotate
through the workloads so host-load drift cancels out of cross-workload
ratios, and rows report the median and interquartile range over the
per-workload timings. The MAC column carries the convention
count from the `macs` module for the same (n, m) shape, so measured time
can be read against nominal work.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import attention, clustering, macs

VARIANTS = ("self", "centroid", "centroid-knn")


@dataclass
class BenchRecord:
    n: int
    m: int
    variant: str
    reps: int
    median_ns: int
    iqr_ns: int
    macs: int


def parse_m_rule(rule) -> "callable":
    """m from n: "fixed:K" pins K centroids, "ratio:R" scales with n."""
    if callable(rule):
        return rule
    kind, _, arg = str(rule).partition(":")
    if kind == "fixed":
        k = int(arg)
        return lambda n: min(k, n)
    if kind == "ratio":
        r = float(arg)
        if not 0 < r <= 1:
            raise ValueError(f"ratio must be in (0, 1], got {r}")
        return lambda n: max(1, int(n * r))
    raise ValueError(f"m_rule must be 'fixed:K' or 'ratio:R', got {rule!r}")


def _make_workload(variant: str, x, m: int, seed: int):
    """Returns a zero-argument callable running one attention application."""
    n = x.shape[0]
    if variant == "self":
        d = x.shape[1]
        rng = np.random.default_rng(seed)
        head = attention.HeadParams(w_query=rng.standard_normal((d, d)) / np.sqrt(d),
                                    w_key=rng.standard_normal((d, d)) / np.sqrt(d),
                                    w_value=rng.standard_normal((d, d)) / np.sqrt(d))
        return lambda: attention.self_attention(x, [head])
    init = clustering.RandomSampleWithoutReplacement(seed)
    knn = min(16, n) if variant == "centroid-knn" else None
    axis = "inputs" if variant == "centroid-knn" else "centroids"
    cfg = attention.CentroidAttentionConfig(
        num_centroids=m, num_steps=1, sharpness=1.0, norm_axis=axis,
        initializer=init, knn_k=knn)
    return lambda: attention.centroid_attention(x, cfg)


def time_workload(fn, reps: int) -> tuple[int, int]:
    """Median and IQR over `reps` single-call timings, in nanoseconds."""
    fn()
    fn()  # warmup: touches caches, triggers any lazy setup
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times[i] = time.perf_counter_ns() - t0
    q25, q50, q75 = np.percentile(times, [25, 50, 75])
    return int(q50), int(q75 - q25)


def _record_macs(variant: str, n: int, m: int, d: int) -> int:
    shape = macs.EncoderShape(depth=1, d_model=d, d_ff=0,
                              ca_at={} if variant == "self" else {1: m})
    return macs.mac_count(shape, n).total


def run_bench(n_list, m_rule="fixed:32", variants=VARIANTS, reps: int = 7,
              d: int = 32, seed: int = 0) -> list[BenchRecord]:
    if reps < 5:
        raise ValueError(f"need at least 5 repetitions, got {reps}")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
    m_of = parse_m_rule(m_rule)
    rng = np.random.default_rng(seed)
    cells = []
    for n in n_list:
        x = rng.standard_normal((n, d))
        m = m_of(n)
        for variant in variants:
            cells.append((n, m, variant, _make_workload(variant, x, m, seed)))
    for _, _, _, fn in cells:
        fn()
        fn()  # warmup: touches caches, triggers any lazy setup
    # interleave repetitions so a slow stretch of the host machine taxes
    # every workload equally instead of poisoning one row's median
    times = np.empty((len(cells), reps))
    for r in range(reps):
        for c, (_, _, _, fn) in enumerate(cells):
            t0 = time.perf_counter_ns()
            fn()
            times[c, r] = time.perf_counter_ns() - t0
    records = []
    for c, (n, m, variant, _) in enumerate(cells):
        q25, q50, q75 = np.percentile(times[c], [25, 50, 75])
        records.append(BenchRecord(
            n=n, m=(n if variant == "self" else m), variant=variant,
            reps=reps, median_ns=int(q50), iqr_ns=int(q75 - q25),
            macs=_record_macs(variant, n, m, d)))
    return records


CSV_HEADER = ["n", "m", "variant", "reps", "median_ns", "iqr_ns", "macs"]


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.n, r.m, r.variant, r.reps, r.median_ns, r.iqr_ns, r.macs])


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    out = []
    for row in rows[1:]:
        n, m, variant, reps, med, iqr, mac = row
        out.append(BenchRecord(int(n), int(m), variant, int(reps),
                               int(med), int(iqr), int(mac)))
    return out
