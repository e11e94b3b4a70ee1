"""Trainable stack: construction, composition against the numpy layers,
gradient checks, training loop behavior, synthetic data, and ablation."""

import json

import numpy as np
import pytest

from centroid_attention import (
    CABlock,
    CentroidAttentionConfig,
    FarthestPointSampling,
    HeadParams,
    KMeansWarmStart,
    MLPBlock,
    MeanPoolStride,
    Model,
    ModelSpec,
    SABlock,
    ScaledDotProduct,
    SynthConfig,
    TrainHyper,
    ablate,
    accuracy,
    build_model,
    centroid_attention,
    config_hash,
    default_spec,
    eval_throughput,
    layout_oracle_accuracy,
    self_attention,
    synth_dataset,
    train,
)
from centroid_attention.autodiff import finite_diff_check


def tiny_spec(**kw):
    base = dict(input_dim=2, embed_dim=4, tokens=8, n_classes=3,
                blocks=(SABlock(), CABlock(num_centroids=3, init="fps")),
                classifier=(5,), seed=0)
    base.update(kw)
    return ModelSpec(**base)


def layer_norm(a, eps=1e-5):
    mu = a.mean(axis=-1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
    return (a - mu) / np.sqrt(var + eps)


# ----- construction -----------------------------------------------------

def test_same_seed_same_params():
    a = build_model(tiny_spec())
    b = build_model(tiny_spec())
    assert a.params.keys() == b.params.keys()
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name]), name


def test_different_seed_different_params():
    a = build_model(tiny_spec(seed=0))
    b = build_model(tiny_spec(seed=1))
    assert any(not np.array_equal(a.params[n], b.params[n]) for n in a.params)


def test_token_schedule_default_stack():
    m = build_model(default_spec())
    assert m.token_schedule == [64, 64, 8, 8]


def test_forward_reports_token_counts():
    m = build_model(tiny_spec())
    x = np.random.default_rng(0).standard_normal((8, 2))
    logits = m.forward(x)
    assert logits.shape == (3,)
    # embed output plus one entry per block
    assert m.last_token_counts == [8, 8, 3]


def test_too_many_centroids_names_block():
    spec = tiny_spec(blocks=(SABlock(), CABlock(num_centroids=9)))
    with pytest.raises(ValueError, match="block 1"):
        build_model(spec)


def test_mean_pool_divisibility_names_block():
    spec = tiny_spec(blocks=(CABlock(num_centroids=3, init="mean-pool"),))
    with pytest.raises(ValueError, match="block 0"):
        build_model(spec)


def test_shrink_then_shrink_again():
    spec = tiny_spec(blocks=(CABlock(num_centroids=4, init="mean-pool"),
                             CABlock(num_centroids=2, init="mean-pool")))
    m = build_model(spec)
    assert m.token_schedule == [8, 4, 2]


def test_bad_pool_rejected():
    with pytest.raises(ValueError, match="pool"):
        build_model(tiny_spec(pool="median"))


def test_bad_init_rejected():
    with pytest.raises(ValueError, match="init"):
        CABlock(num_centroids=2, init="spectral")


def test_bad_step_count_rejected():
    with pytest.raises(ValueError, match="num_steps"):
        CABlock(num_centroids=2, num_steps=0)


def test_step_size_defaults_to_inverse_steps():
    assert CABlock(num_centroids=2, num_steps=4).step_size == 0.25
    assert CABlock(num_centroids=2, num_steps=4, step_size=0.1).step_size == 0.1


def test_empty_block_list_still_classifies():
    m = build_model(tiny_spec(blocks=()))
    x = np.random.default_rng(1).standard_normal((8, 2))
    assert m.forward(x).shape == (3,)


def test_input_shape_check():
    m = build_model(tiny_spec())
    with pytest.raises(ValueError, match="compiled for input"):
        m.forward(np.zeros((7, 2)))


def test_zeroed_params_give_flat_logits():
    m = build_model(tiny_spec())
    for name in m.params:
        m.params[name][...] = 0.0
    logits = m.forward(np.random.default_rng(2).standard_normal((8, 2)))
    assert np.allclose(logits, logits[0])


# ----- composition against the standalone layers ------------------------

def test_sa_block_matches_self_attention():
    spec = tiny_spec(blocks=(SABlock(n_heads=2, step_size=0.7),))
    m = build_model(spec)
    x = np.random.default_rng(3).standard_normal((8, 2))
    logits = m.forward(x)

    h = x @ m.params["embed.w"]
    hn = layer_norm(h)
    heads = [HeadParams(m.params[f"b0.h{j}.wq"], m.params[f"b0.h{j}.wk"],
                        m.params[f"b0.h{j}.wv"]) for j in range(2)]
    h = h + 0.7 * self_attention(hn, heads, mode="sum", residual=False)
    hn = layer_norm(h)
    pooled = np.concatenate([hn.mean(axis=0), hn.max(axis=0)])
    r = pooled[None, :]
    r = r @ m.params["head0.w"] + m.params["head0.b"]
    r = np.where(r > 0, r, 0.2 * r)
    r = r @ m.params["head1.w"] + m.params["head1.b"]
    assert np.abs(logits - r[0]).max() < 1e-12


@pytest.mark.parametrize("tied", [False, True])
def test_ca_block_matches_centroid_attention(tied):
    spec = tiny_spec(blocks=(CABlock(num_centroids=3, num_steps=2,
                                     sharpness=1.5, tied=tied),))
    m = build_model(spec)
    x = np.random.default_rng(4).standard_normal((8, 2))
    m.forward(x)
    got = m._logits_graph._values[m._block_nodes[1]]

    hn = layer_norm(x @ m.params["embed.w"])
    kern = ScaledDotProduct(m.params["b0.wq"], m.params["b0.wk"],
                            scale=1.0 / np.sqrt(4))
    cfg = CentroidAttentionConfig(
        num_centroids=3, kernels=(kern,),
        values=None if tied else (m.params["b0.wv"],),
        num_steps=2, step_size=0.5, sharpness=1.5,
        norm_axis="centroids",
        initializer=FarthestPointSampling(start="min"))
    expect = centroid_attention(hn, cfg).centroids
    assert np.abs(got - expect).max() < 1e-12


def test_mlp_block_hand_composed():
    spec = tiny_spec(blocks=(MLPBlock(hidden_dim=6),))
    m = build_model(spec)
    x = np.random.default_rng(5).standard_normal((8, 2))
    m.forward(x)
    got = m._logits_graph._values[m._block_nodes[1]]

    h = x @ m.params["embed.w"]
    z = layer_norm(h) @ m.params["b0.w1"] + m.params["b0.b1"]
    z = np.where(z > 0, z, 0.2 * z)
    expect = h + z @ m.params["b0.w2"] + m.params["b0.b2"]
    assert np.abs(got - expect).max() < 1e-12


@pytest.mark.parametrize("init,oracle", [
    ("fps", lambda xn, m: FarthestPointSampling(start="min").init(xn, m)),
    ("mean-pool", lambda xn, m: MeanPoolStride(xn.shape[0] // m).init(xn, m)),
    ("k-means", lambda xn, m: KMeansWarmStart(3, start="min").init(xn, m)),
])
def test_initial_centroids_match_reference(init, oracle):
    # step_size=0 freezes the block at its initial centroids
    spec = tiny_spec(blocks=(CABlock(num_centroids=2, init=init,
                                     step_size=0.0),))
    m = build_model(spec)
    x = np.random.default_rng(6).standard_normal((8, 2))
    m.forward(x)
    got = m._logits_graph._values[m._block_nodes[1]]
    xn = layer_norm(x @ m.params["embed.w"])
    assert np.abs(got - oracle(xn, 2)).max() < 1e-10


def test_random_init_uses_frozen_sample():
    spec = tiny_spec(blocks=(CABlock(num_centroids=2, init="random",
                                     step_size=0.0),))
    m = build_model(spec)
    idx = m._ca_sample_idx[0]
    assert len(idx) == 2 and len(set(idx)) == 2
    x = np.random.default_rng(7).standard_normal((8, 2))
    m.forward(x)
    got = m._logits_graph._values[m._block_nodes[1]]
    xn = layer_norm(x @ m.params["embed.w"])
    assert np.array_equal(got, xn[idx])


def test_permutation_invariance_with_fps():
    # fps picks by geometry, the pools are symmetric, so shuffling tokens
    # moves nothing but floating-point summation order
    m = build_model(tiny_spec())
    rng = np.random.default_rng(8)
    x = rng.standard_normal((8, 2))
    base = m.forward(x)
    for _ in range(3):
        perm = rng.permutation(8)
        assert np.abs(m.forward(x[perm]) - base).max() < 1e-9


# ----- gradients --------------------------------------------------------

def test_loss_gradients_match_finite_differences():
    # random init keeps the centroid picks off the parameter path, so
    # every parameter is safe to perturb
    spec = tiny_spec(blocks=(SABlock(), CABlock(num_centroids=3, num_steps=2,
                                                init="random")))
    m = build_model(spec)
    x = np.random.default_rng(9).standard_normal((8, 2))
    _, grads = m.loss_and_grads(x, 1)
    assert grads.keys() == m.params.keys()
    for name in sorted(m.params):
        shape = m.params[name].shape
        base = m.params[name].copy()

        def f(vec):
            m.params[name] = vec.reshape(shape)
            loss, _ = m.loss_and_grads(x, 1)
            return loss

        report = finite_diff_check(f, base.ravel(), grads[name].ravel(),
                                   tol=1e-6)
        m.params[name] = base
        assert report.passed, (name, report.max_rel_err)


def test_tied_ca_gradients_match_finite_differences():
    spec = tiny_spec(blocks=(CABlock(num_centroids=3, init="random",
                                     tied=True),))
    m = build_model(spec)
    x = np.random.default_rng(10).standard_normal((8, 2))
    _, grads = m.loss_and_grads(x, 0)
    for name in ("b0.wq", "b0.wk"):
        base = m.params[name].copy()

        def f(vec):
            m.params[name] = vec.reshape(base.shape)
            loss, _ = m.loss_and_grads(x, 0)
            return loss

        report = finite_diff_check(f, base.ravel(), grads[name].ravel(),
                                   tol=1e-6)
        m.params[name] = base
        assert report.passed, (name, report.max_rel_err)


def test_loss_is_cross_entropy():
    m = build_model(tiny_spec())
    x = np.random.default_rng(11).standard_normal((8, 2))
    logits = m.forward(x)
    for label in range(3):
        loss, _ = m.loss_and_grads(x, label)
        z = logits - logits.max()
        expect = np.log(np.exp(z).sum()) - z[label]
        assert abs(loss - expect) < 1e-10


# ----- synthetic data ---------------------------------------------------

def test_synth_dataset_shapes_and_split():
    data = synth_dataset(SynthConfig(n_points=16, n_classes=3,
                                     samples_per_class=10, seed=0))
    assert len(data.train) == 24 and len(data.test) == 6
    for pts, label in data.train + data.test:
        assert pts.shape == (16, 2)
        assert 0 <= label < 3
    for split in (data.train, data.test):
        counts = np.bincount([y for _, y in split], minlength=3)
        assert (counts == counts[0]).all()


def test_synth_dataset_deterministic():
    a = synth_dataset(SynthConfig(seed=3, samples_per_class=5))
    b = synth_dataset(SynthConfig(seed=3, samples_per_class=5))
    for (pa, la), (pb, lb) in zip(a.train + a.test, b.train + b.test):
        assert la == lb and np.array_equal(pa, pb)
    c = synth_dataset(SynthConfig(seed=4, samples_per_class=5))
    assert not np.array_equal(a.train[0][0], c.train[0][0])


def test_synth_dataset_zero_spread_sits_on_layouts():
    from centroid_attention.model import _LAYOUTS
    data = synth_dataset(SynthConfig(n_points=8, n_classes=2, spread=0.0,
                                     samples_per_class=2, seed=0))
    for pts, label in data.train + data.test:
        d = ((pts[:, None, :] - _LAYOUTS[label][None, :, :]) ** 2).sum(-1)
        assert d.min(axis=1).max() == 0.0
        # round-robin over four blobs: each center appears n_points/4 times
        nearest = d.argmin(axis=1)
        assert (np.bincount(nearest, minlength=4) == 2).all()


def test_synth_dataset_validation():
    with pytest.raises(ValueError, match="n_classes"):
        synth_dataset(SynthConfig(n_classes=1))
    with pytest.raises(ValueError, match="n_classes"):
        synth_dataset(SynthConfig(n_classes=5))
    with pytest.raises(ValueError, match="points"):
        synth_dataset(SynthConfig(n_points=3))
    with pytest.raises(ValueError, match="spread"):
        synth_dataset(SynthConfig(spread=-0.1))


def test_layout_oracle_is_reliable_at_default_spread():
    data = synth_dataset(SynthConfig(n_points=32, n_classes=4,
                                     samples_per_class=25, seed=1))
    assert layout_oracle_accuracy(data.test, 4) == 1.0
    assert layout_oracle_accuracy(data.train, 4) == 1.0


# ----- training ---------------------------------------------------------

def small_data(seed=0):
    return synth_dataset(SynthConfig(n_points=8, n_classes=2,
                                     samples_per_class=5, seed=seed))


def test_zero_rate_changes_nothing():
    data = small_data()
    m = build_model(tiny_spec(n_classes=2))
    before = {k: v.copy() for k, v in m.params.items()}
    train(m, data, TrainHyper(lr=0.0, epochs=2, batch=4))
    for name, val in before.items():
        assert np.array_equal(m.params[name], val), name


def test_training_is_deterministic():
    data = small_data()
    hyper = TrainHyper(lr=0.05, epochs=3, batch=4, seed=2)
    r1 = train(build_model(tiny_spec(n_classes=2)), data, hyper)
    r2 = train(build_model(tiny_spec(n_classes=2)), data, hyper)
    assert r1.to_lines() == r2.to_lines()
    assert len(r1.to_lines()) == 3


def test_training_reduces_loss():
    data = small_data()
    m = build_model(tiny_spec(n_classes=2))
    report = train(m, data, TrainHyper(lr=0.05, epochs=4, batch=4))
    assert report.epochs[-1].loss < report.epochs[0].loss
    assert report.wall_time > 0
    assert report.final_test_acc() == report.epochs[-1].test_acc


def test_report_lines_are_json_without_wall_time():
    data = small_data()
    m = build_model(tiny_spec(n_classes=2))
    report = train(m, data, TrainHyper(lr=0.05, epochs=2, batch=4))
    for i, line in enumerate(report.to_lines()):
        rec = json.loads(line)
        assert rec["epoch"] == i
        assert set(rec) == {"epoch", "loss", "train_acc", "test_acc",
                            "seed", "config"}


def test_config_hash_tracks_model_and_hyper():
    m = build_model(tiny_spec())
    h1 = config_hash(m, TrainHyper(lr=0.05))
    h2 = config_hash(m, TrainHyper(lr=0.01))
    h3 = config_hash(build_model(tiny_spec(seed=5)), TrainHyper(lr=0.05))
    assert len(h1) == 12
    assert h1 != h2 and h1 != h3
    assert h1 == config_hash(build_model(tiny_spec()), TrainHyper(lr=0.05))


def test_poisoned_params_abort_with_epoch():
    data = small_data()
    m = build_model(tiny_spec(n_classes=2))
    m.params["embed.w"][0, 0] = np.inf
    with np.errstate(invalid="ignore"):
        with pytest.raises(RuntimeError, match="non-finite loss at epoch 0"):
            train(m, data, TrainHyper(lr=0.05, epochs=1, batch=4))


def test_accuracy_empty_split():
    m = build_model(tiny_spec())
    assert accuracy(m, []) == 0.0


# ----- ablation ---------------------------------------------------------

def test_ablate_iteration_axis_rows():
    data = small_data()
    table = ablate(data, tiny_spec(n_classes=2), "T",
                   TrainHyper(lr=0.05, epochs=1, batch=4))
    assert [r.setting for r in table.rows] == ["T=1", "T=2", "T=3"]
    assert all(r.throughput > 0 for r in table.rows)
    text = table.to_text()
    assert text.splitlines()[0].startswith("setting")
    assert len(text.splitlines()) == 4


def test_ablate_init_axis_rows():
    data = small_data()
    spec = tiny_spec(n_classes=2,
                     blocks=(CABlock(num_centroids=2, init="fps"),))
    table = ablate(data, spec, "init", TrainHyper(lr=0.05, epochs=1, batch=4))
    assert [r.setting for r in table.rows] == ["random", "fps", "mean-pool",
                                              "k-means"]


def test_ablate_threaded_keeps_row_order():
    data = small_data()
    hyper = TrainHyper(lr=0.05, epochs=1, batch=4)
    seq = ablate(data, tiny_spec(n_classes=2), "T", hyper, workers=1)
    par = ablate(data, tiny_spec(n_classes=2), "T", hyper, workers=3)
    assert [r.setting for r in par.rows] == [r.setting for r in seq.rows]
    for a, b in zip(seq.rows, par.rows):
        assert a.test_acc == b.test_acc and a.train_acc == b.train_acc


def test_ablate_unknown_axis():
    with pytest.raises(ValueError, match="axis"):
        ablate(small_data(), tiny_spec(), "depth")


def test_eval_throughput_positive():
    data = small_data()
    m = build_model(tiny_spec(n_classes=2))
    assert eval_throughput(m, data.test, reps=2) > 0
