"""Command-line harness.

Subcommands: `gradcheck` certifies the update-step/objective-gradient
equivalence against finite differences, `maccount` prints exact
multiply-accumulate totals, `bench` times the attention variants,
`cluster` runs the centroid refinement on a CSV point set, `train` fits
the demo stack on the synthetic layout task, `ablate` sweeps iteration
count or initializer.

Shared flags on every subcommand: --seed, --threads (worker cap where the
command parallelizes), --out (output path). Every command is
deterministic given its seed; exit status is 0 only when nothing failed,
and failures are always enumerated rather than stopping at the first.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import attention, bench, clustering, kernels, macs
from . import model as model_mod
from .autodiff import finite_diff_check


def _add_common(p, default_out=None):
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--threads", type=int, default=1, help="max worker threads")
    p.add_argument("--out", default=default_out, help="output path")


# ----- gradcheck --------------------------------------------------------

def _gradcheck_instance(index: int, base_seed: int, tol: float) -> dict:
    rng = np.random.default_rng(base_seed + index)
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, min(4, n) + 1))
    d = int(rng.integers(1, 6))
    alpha = (0.5, 1.0, 5.0)[index % 3]
    x = rng.standard_normal((n, d))
    u = rng.standard_normal((m, d))
    if index % 5 == 4:
        kind = "both"
        kerns = (attention.NegHalfSquaredDistance(),
                 attention.ScaledDotProduct(rng.standard_normal((d, d)),
                                            rng.standard_normal((d, d))))
    elif index % 2 == 0:
        kind = "distance"
        kerns = (attention.NegHalfSquaredDistance(),)
    else:
        kind = "dot"
        kerns = (attention.ScaledDotProduct(rng.standard_normal((d, d)),
                                            rng.standard_normal((d, d))),)
    eps = (1.0, 0.5, 0.25)[index % 3]
    cfg = attention.CentroidAttentionConfig(
        num_centroids=m, kernels=kerns, num_steps=1, step_size=eps,
        sharpness=alpha, norm_axis="centroids")
    grad = clustering.objective_gradient(x, u, kerns, alpha)
    increment = (attention.centroid_update_step(x, u, cfg) - u) / eps
    identity_err = float(np.abs(increment - grad).max())
    fd = finite_diff_check(
        lambda uu: clustering.soft_kmeans_objective(x, uu, kerns, alpha),
        u, grad, tol=tol)
    small = 1e-3
    before = clustering.soft_kmeans_objective(x, u, kerns, alpha)
    cfg_small = attention.CentroidAttentionConfig(
        num_centroids=m, kernels=kerns, num_steps=1, step_size=small,
        sharpness=alpha, norm_axis="centroids")
    after = clustering.soft_kmeans_objective(
        x, attention.centroid_update_step(x, u, cfg_small), kerns, alpha)
    ascent_ok = bool(after >= before - 1e-12)
    passed = bool(fd.passed and identity_err <= 1e-12 and ascent_ok)
    return {"instance": index, "n": n, "m": m, "d": d, "alpha": alpha,
            "kernel": kind, "max_rel_err": fd.max_rel_err,
            "identity_err": identity_err, "ascent_ok": ascent_ok,
            "passed": passed}


def cmd_gradcheck(args) -> int:
    if args.tol <= 0:
        print(f"error: tol must be positive, got {args.tol}", file=sys.stderr)
        return 2
    idxs = range(args.seeds)
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            records = list(pool.map(
                lambda i: _gradcheck_instance(i, args.seed, args.tol), idxs))
    else:
        records = [_gradcheck_instance(i, args.seed, args.tol) for i in idxs]
    failures = [r for r in records if not r["passed"]]
    report = {"seeds": args.seeds, "tol": args.tol,
              "max_rel_err": max(r["max_rel_err"] for r in records),
              "max_identity_err": max(r["identity_err"] for r in records),
              "failures": [r["instance"] for r in failures],
              "passed": not failures, "records": records}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    print(f"gradcheck: {args.seeds} instances, tol {args.tol:g}, "
          f"max rel err {report['max_rel_err']:.3e}, "
          f"max identity err {report['max_identity_err']:.3e}")
    for r in failures:
        print(f"FAIL instance {r['instance']} (n={r['n']} m={r['m']} d={r['d']} "
              f"alpha={r['alpha']} kernel={r['kernel']}): "
              f"rel err {r['max_rel_err']:.3e}, ascent_ok={r['ascent_ok']}")
    print("PASS" if report["passed"] else f"{len(failures)} failure(s)")
    return 0 if report["passed"] else 1


# ----- maccount ---------------------------------------------------------

def cmd_maccount(args) -> int:
    ca_at = {}
    if args.ca_layer is not None:
        if args.m is None:
            print("error: --ca-layer requires --m", file=sys.stderr)
            return 2
        ca_at[args.ca_layer] = args.m
    shape = macs.EncoderShape(depth=args.depth, d_model=args.d_model,
                              d_ff=args.d_ff, ca_at=ca_at, ca_init=args.init)
    report = macs.mac_count(shape, args.n)
    print(report.to_text())
    payload = {"layers": [{"name": l.name, "tokens": l.tokens, "keys": l.keys,
                           "macs": l.macs} for l in report.layers],
               "total": report.total, "descriptor": report.descriptor}
    if ca_at:
        ratio = macs.reduction_ratio(shape, args.n)
        vanilla = macs.mac_count(
            macs.EncoderShape(depth=args.depth, d_model=args.d_model,
                              d_ff=args.d_ff), args.n).total
        print(f"vanilla total: {vanilla}")
        print(f"reduction ratio: {ratio:.4f}")
        payload["vanilla_total"] = vanilla
        payload["ratio"] = ratio
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


# ----- bench ------------------------------------------------------------

def cmd_bench(args) -> int:
    try:
        kernels.set_backend(args.backend)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    n_list = [int(s) for s in args.n_list.split(",") if s]
    variants = tuple(s for s in args.variants.split(",") if s)
    records = bench.run_bench(n_list, m_rule=args.m_rule, variants=variants,
                              reps=args.reps, d=args.d, seed=args.seed)
    bench.write_csv(records, args.out)
    print(",".join(bench.CSV_HEADER))
    for r in records:
        print(f"{r.n},{r.m},{r.variant},{r.reps},{r.median_ns},{r.iqr_ns},{r.macs}")
    print(f"wrote {args.out} (backend: {kernels.active_backend()})")
    return 0


# ----- cluster ----------------------------------------------------------

def _read_points_csv(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        return None, [f"{path}: {e.strerror or e}"]
    errors = []
    if not lines:
        return None, [f"{path}: empty file"]
    if [c.strip() for c in lines[0].split(",")] != ["x", "y"]:
        errors.append(f"{path}: line 1: expected header 'x,y', got {lines[0]!r}")
    pts = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            if len(cells) != 2:
                raise ValueError
            pts.append((float(cells[0]), float(cells[1])))
        except ValueError:
            errors.append(f"{path}: line {ln}: expected two numeric fields, got {line!r}")
    if not pts and not errors:
        errors.append(f"{path}: no data rows")
    if errors:
        return None, errors
    return np.array(pts), []


def cmd_cluster(args) -> int:
    x, errors = _read_points_csv(args.input)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    if args.init == "fps":
        init = clustering.FarthestPointSampling(start="min")
    else:
        init = clustering.RandomSampleWithoutReplacement(args.seed)
    kern = attention.NegHalfSquaredDistance()
    # the gradient-tied increment scales with cluster mass (roughly N/M
    # points per centroid), so M/N turns one step into a soft mean update;
    # the residual-style 1/T default would overshoot on standalone data
    step = args.step_size if args.step_size is not None else args.m / len(x)
    cfg = attention.CentroidAttentionConfig(
        num_centroids=args.m, kernels=(kern,), num_steps=args.steps,
        step_size=step, sharpness=args.alpha, initializer=init)
    result = attention.centroid_attention(x, cfg)
    assignment = clustering.assign(x, result.centroids, kern, args.alpha)
    payload = {
        "centroids": [[float(v) for v in row] for row in result.centroids],
        "assignments": [int(l) for l in assignment.labels],
        "objective": clustering.soft_kmeans_objective(
            x, result.centroids, (kern,), args.alpha),
        "config": {"m": args.m, "alpha": args.alpha, "steps": args.steps,
                   "step_size": cfg.step_size, "init": args.init,
                   "seed": args.seed, "input": args.input, "n_points": len(x)},
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out} ({len(x)} points, {args.m} centroids)")
    else:
        print(text)
    return 0


# ----- train / ablate ---------------------------------------------------

_CONFIG_KEYS = {"embed_dim": int, "blocks": list, "pool": str,
                "classifier": list, "lr": (int, float), "epochs": int,
                "batch": int, "seed": int, "tokens": int, "n_classes": int,
                "samples_per_class": int, "spread": (int, float)}
_REQUIRED_KEYS = ("embed_dim", "blocks", "pool", "classifier",
                  "lr", "epochs", "batch", "seed")


def default_config() -> dict:
    with resources.files("centroid_attention").joinpath(
            "configs/default_train.json").open() as fh:
        return json.load(fh)


def _load_config(path):
    if path:
        with open(path) as fh:
            cfg = json.load(fh)
    else:
        cfg = default_config()
    errors = []
    for key in _REQUIRED_KEYS:
        if key not in cfg:
            errors.append(f"config field {key!r}: missing")
    for key, val in cfg.items():
        want = _CONFIG_KEYS.get(key)
        if want is None:
            errors.append(f"config field {key!r}: unknown")
        elif not isinstance(val, want) or isinstance(val, bool):
            errors.append(f"config field {key!r}: expected {want}, got {type(val).__name__}")
    if not errors:
        if cfg["lr"] < 0:
            errors.append("config field 'lr': must be nonnegative")
        for field in ("epochs", "batch", "embed_dim"):
            if cfg[field] < 1:
                errors.append(f"config field {field!r}: must be >= 1")
    return cfg, errors


def _block_from_json(i, b, errors):
    kind = b.get("kind")
    known = {"sa": {"kind", "heads", "head_dim", "step"},
             "ca": {"kind", "m", "t", "init", "step", "sharpness", "tied"},
             "mlp": {"kind", "hidden"}}
    if kind not in known:
        errors.append(f"config field 'blocks[{i}].kind': expected sa/ca/mlp, got {kind!r}")
        return None
    extra = set(b) - known[kind]
    if extra:
        errors.append(f"config field 'blocks[{i}]': unknown keys {sorted(extra)}")
        return None
    try:
        if kind == "sa":
            return model_mod.SABlock(n_heads=b.get("heads", 1),
                                     head_dim=b.get("head_dim"),
                                     step_size=b.get("step", 1.0))
        if kind == "ca":
            return model_mod.CABlock(num_centroids=b["m"], num_steps=b.get("t", 1),
                                     init=b.get("init", "fps"),
                                     step_size=b.get("step"),
                                     sharpness=b.get("sharpness", 1.0),
                                     tied=b.get("tied", False))
        return model_mod.MLPBlock(hidden_dim=b["hidden"])
    except (KeyError, ValueError) as e:
        errors.append(f"config field 'blocks[{i}]': {e}")
        return None


def _setup_run(args):
    cfg, errors = _load_config(args.config)
    blocks = []
    if not errors:
        for i, b in enumerate(cfg["blocks"]):
            blk = _block_from_json(i, b, errors)
            if blk is not None:
                blocks.append(blk)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return None
    seed = args.seed if args.seed != 0 else cfg["seed"]
    tokens = cfg.get("tokens", 64)
    n_classes = cfg.get("n_classes", 3)
    spec = model_mod.ModelSpec(
        input_dim=2, embed_dim=cfg["embed_dim"], tokens=tokens,
        n_classes=n_classes, blocks=tuple(blocks), pool=cfg["pool"],
        classifier=tuple(cfg["classifier"]), seed=seed)
    data = model_mod.synth_dataset(model_mod.SynthConfig(
        n_points=tokens, n_classes=n_classes,
        spread=cfg.get("spread", 0.1),
        samples_per_class=cfg.get("samples_per_class", 50), seed=seed))
    hyper = model_mod.TrainHyper(lr=cfg["lr"], epochs=cfg["epochs"],
                                 batch=cfg["batch"], seed=seed)
    return spec, data, hyper


def cmd_train(args) -> int:
    setup = _setup_run(args)
    if setup is None:
        return 2
    spec, data, hyper = setup
    net = model_mod.build_model(spec)
    try:
        report = model_mod.train(net, data, hyper)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    with open(args.out, "w") as fh:
        fh.write("\n".join(report.to_lines()) + "\n")
    final = report.epochs[-1]
    print(f"trained {hyper.epochs} epochs in {report.wall_time:.1f}s "
          f"(config {report.config_hash})")
    print(f"final train accuracy: {final.train_acc:.3f}")
    print(f"final test accuracy: {final.test_acc:.3f}")
    return 0


def cmd_ablate(args) -> int:
    setup = _setup_run(args)
    if setup is None:
        return 2
    spec, data, hyper = setup
    if not any(isinstance(b, model_mod.CABlock) for b in spec.blocks):
        print("error: ablation needs at least one centroid block", file=sys.stderr)
        return 2
    table = model_mod.ablate(data, spec, args.axis, hyper, workers=args.threads)
    print(table.to_text())
    if args.out:
        payload = {"axis": table.axis,
                   "rows": [{"setting": r.setting, "test_acc": r.test_acc,
                             "train_acc": r.train_acc, "throughput": r.throughput}
                            for r in table.rows]}
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
        print(f"wrote {args.out}")
    return 0


# ----- entry ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="centroid-attn",
        description="Centroid attention: clustering-derived token reduction.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="verify update step == objective gradient")
    g.add_argument("--seeds", type=int, default=50, help="instance count")
    g.add_argument("--tol", type=float, default=1e-6, help="relative tolerance")
    _add_common(g)
    g.set_defaults(fn=cmd_gradcheck)

    m = sub.add_parser("maccount", help="exact multiply-accumulate totals")
    m.add_argument("--depth", type=int, default=4)
    m.add_argument("--d-model", type=int, default=512)
    m.add_argument("--d-ff", type=int, default=2048)
    m.add_argument("--n", type=int, default=45, help="input token count")
    m.add_argument("--ca-layer", type=int, default=None,
                   help="1-based layer to replace with a centroid layer")
    m.add_argument("--m", type=int, default=None, help="centroid count")
    m.add_argument("--init", default="random", choices=macs._INIT_KINDS)
    _add_common(m)
    m.set_defaults(fn=cmd_maccount)

    b = sub.add_parser("bench", help="time attention variants")
    b.add_argument("--n-list", default="64,128,256,512",
                   help="comma-separated token counts")
    b.add_argument("--m-rule", default="fixed:32", help="fixed:K or ratio:R")
    b.add_argument("--variants", default=",".join(bench.VARIANTS))
    b.add_argument("--reps", type=int, default=7)
    b.add_argument("--d", type=int, default=32)
    b.add_argument("--backend", default="auto",
                   choices=("auto", "python", "compiled"))
    _add_common(b, default_out="bench.csv")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("cluster", help="cluster a CSV point set")
    c.add_argument("--input", required=True, help="CSV with header x,y")
    c.add_argument("--m", type=int, required=True, help="centroid count")
    c.add_argument("--alpha", type=float, default=1.0, help="sharpness")
    c.add_argument("--steps", type=int, default=3, help="refinement steps")
    c.add_argument("--step-size", type=float, default=None,
                   help="default m/n_points (soft mean update)")
    c.add_argument("--init", default="fps", choices=("fps", "random"))
    _add_common(c)
    c.set_defaults(fn=cmd_cluster)

    t = sub.add_parser("train", help="train the demo stack")
    t.add_argument("--config", default=None, help="JSON config (default bundled)")
    _add_common(t, default_out="train_report.jsonl")
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("ablate", help="sweep iteration count or initializer")
    a.add_argument("--axis", required=True, choices=("T", "init"))
    a.add_argument("--config", default=None, help="JSON config (default bundled)")
    _add_common(a)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
