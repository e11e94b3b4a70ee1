"""Dispatch layer: compiled and pure-python kernels must agree exactly
on selections and to float precision on sums."""

import numpy as np
import pytest

from centroid_attention import kernels
from centroid_attention import _kernels_py as pyk

needs_compiled = pytest.mark.skipif(not kernels.HAVE_COMPILED,
                                    reason="compiled backend not built")


def _random_instance(seed, n=20, m=6, d=4):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((m, d))


def test_default_backend_reported():
    assert kernels.active_backend() in ("python", "compiled")


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError, match="backend"):
        kernels.set_backend("gpu")


def test_set_backend_python_roundtrip():
    prev = kernels.active_backend()
    kernels.set_backend("python")
    assert kernels.active_backend() == "python"
    kernels.set_backend("auto")
    assert kernels.active_backend() == prev


def test_knn_indices_sorted_by_distance():
    x, u = _random_instance(0)
    idx = kernels.knn_indices(x, u, 5)
    d = ((x[:, None, :] - u[None, :, :]) ** 2).sum(-1)
    for j in range(u.shape[0]):
        dists = d[idx[j], j]
        assert (np.diff(dists) >= 0).all()
        # the selected k really are the smallest k
        assert np.isclose(dists.max(), np.sort(d[:, j])[4], atol=1e-12)


def test_knn_ties_go_to_lower_index():
    # two inputs at identical positions: the lower row index must win
    x = np.array([[1.0, 0.0], [0.0, 5.0], [1.0, 0.0]])
    u = np.array([[1.0, 0.0]])
    idx = kernels.knn_indices(x, u, 2)
    assert idx[0, 0] == 0
    assert idx[0, 1] == 2


def test_fps_hand_traces():
    x = np.array([[0.0], [1.0], [10.0]])
    assert list(kernels.fps_indices(x, 2, 0)) == [0, 2]
    assert list(kernels.fps_indices(x, 3, 0)) == [0, 2, 1]
    # start elsewhere
    assert list(kernels.fps_indices(x, 2, 2)) == [2, 0]


def test_fps_all_points_any_order_covers_everything():
    x, _ = _random_instance(1, n=9)
    idx = kernels.fps_indices(x, 9, 3)
    assert sorted(idx) == list(range(9))


def test_fps_tie_goes_to_lower_index():
    # symmetric pair equidistant from the start
    x = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    idx = kernels.fps_indices(x, 2, 0)
    assert list(idx) == [0, 1]


def test_gather_weighted_sum_matches_loop():
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((10, 3))
    idx = rng.integers(0, 10, size=(4, 5))
    w = rng.standard_normal((4, 5))
    out = kernels.gather_weighted_sum(w, idx, vals)
    for j in range(4):
        expect = sum(w[j, t] * vals[idx[j, t]] for t in range(5))
        assert np.allclose(out[j], expect, atol=1e-12)


@needs_compiled
def test_backend_parity_pairwise_sqdist():
    from centroid_attention import _ckernels as ck
    for seed in range(5):
        x, u = _random_instance(seed)
        a = pyk.pairwise_sqdist(x, u)
        b = np.asarray(ck.pairwise_sqdist(x, u))
        assert np.abs(a - b).max() < 1e-12


@needs_compiled
def test_backend_parity_knn_and_fps():
    from centroid_attention import _ckernels as ck
    for seed in range(5):
        x, u = _random_instance(seed, n=30, m=7)
        assert np.array_equal(pyk.knn_indices(x, u, 6),
                              np.asarray(ck.knn_indices(x, u, 6)))
        assert np.array_equal(pyk.fps_indices(x, 7, seed % 30),
                              np.asarray(ck.fps_indices(x, 7, seed % 30)))


@needs_compiled
def test_backend_parity_on_exact_ties():
    from centroid_attention import _ckernels as ck
    # duplicated rows force distance ties; both backends must break them
    # identically (lower index)
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    u = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert np.array_equal(pyk.knn_indices(x, u, 3),
                          np.asarray(ck.knn_indices(x, u, 3)))
    assert np.array_equal(pyk.fps_indices(x, 4, 0),
                          np.asarray(ck.fps_indices(x, 4, 0)))


@needs_compiled
def test_backend_parity_gather_weighted_sum():
    from centroid_attention import _ckernels as ck
    rng = np.random.default_rng(3)
    vals = rng.standard_normal((12, 5))
    idx = rng.integers(0, 12, size=(3, 4))
    w = rng.standard_normal((3, 4))
    a = pyk.gather_weighted_sum(w, idx, vals)
    b = np.asarray(ck.gather_weighted_sum(w, idx.astype(np.intp), vals))
    assert np.abs(a - b).max() < 1e-12


@needs_compiled
def test_set_backend_compiled_available():
    kernels.set_backend("compiled")
    assert kernels.active_backend() == "compiled"
    kernels.set_backend("auto")
