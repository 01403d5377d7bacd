import numpy as np
import pytest

import freshnets as fn
import freshnets.dct as dct
import freshnets.tensor_core as tc
from freshnets.baselines import (
    DropFreqConv,
    LrdConv,
    SpatialHashedConv,
    dropfilt_spec,
    dropfreq_kept_positions,
)
from freshnets.errors import AllocationError
from freshnets.fresh_layer import FreshConv
from freshnets.layers import DenseConv

from conftest import check_network_gradients, finite_diff_grads, max_rel_error


LAYER_FACTORIES = {
    "dense": lambda seed: DenseConv(2, 3, 3, layer_seed=seed),
    "fresh": lambda seed: FreshConv(2, 3, 3, 8, 0.25, 2.5, layer_seed=seed),
    "hashed_spatial": lambda seed: SpatialHashedConv(2, 3, 3, 8, layer_seed=seed),
    "dropfreq": lambda seed: DropFreqConv(2, 3, 3, 12, layer_seed=seed),
    "lrd": lambda seed: LrdConv(2, 3, 3, 42, layer_seed=seed),
}


# ----------------------------------------------------------- conformance

@pytest.mark.parametrize("name", sorted(LAYER_FACTORIES))
def test_layer_interface_conformance(name):
    factory = LAYER_FACTORIES[name]
    layer = factory(7)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 2, 4, 4))
    out = layer.forward(x)
    assert out.shape == (2, 3, 4, 4)
    grad_in = layer.backward(rng.normal(size=out.shape))
    assert grad_in.shape == x.shape
    params, grads = layer.params(), layer.grads()
    assert len(params) == len(grads)
    assert all(p.shape == g.shape for p, g in zip(params, grads))
    # stored-scalar accounting matches the reported counts
    assert sum(p.size for p in params) == layer.weight_count + layer.bias_count
    # same seed rebuild reproduces the same filters bit for bit
    again = factory(7)
    assert np.array_equal(layer.materialize(), again.materialize())
    # different seed gives different filters
    other = factory(8)
    assert not np.array_equal(layer.materialize(), other.materialize())


@pytest.mark.parametrize("name", sorted(LAYER_FACTORIES))
@pytest.mark.parametrize("seed", [0, 1])
def test_layer_gradients_match_finite_differences(name, seed):
    layer = LAYER_FACTORIES[name](seed)
    rng = np.random.default_rng(seed + 50)
    x = rng.normal(size=(2, 2, 4, 4))
    target = rng.normal(size=(2, 3, 4, 4))

    def loss_fn():
        return float(((layer.materialize_forward(x) - target) ** 2).sum())

    layer.materialize_forward = lambda x_: tc.conv2d_same(
        x_, layer.materialize(), layer.bias
    )
    out = layer.forward(x)
    layer.backward(2 * (out - target))
    numeric = finite_diff_grads(loss_fn, layer.params())
    assert max_rel_error(layer.grads(), numeric) < 1e-4


# -------------------------------------------------------- spatial hashed

def test_spatial_hashed_single_bucket_constant_filters():
    layer = SpatialHashedConv(2, 2, 3, 1, layer_seed=1, use_sign=False,
                              init=False)
    layer.w[0] = 1.25
    np.testing.assert_array_equal(
        layer.materialize(), np.full((2, 2, 3, 3), 1.25)
    )


def test_spatial_hashed_param_count():
    layer = SpatialHashedConv(4, 6, 5, 37, layer_seed=2)
    assert layer.weight_count == 37
    assert layer.bias_count == 6
    with pytest.raises(AllocationError):
        SpatialHashedConv(1, 1, 3, 0, layer_seed=0)
    with pytest.raises(AllocationError):
        SpatialHashedConv(1, 1, 3, 10, layer_seed=0)


# -------------------------------------------------------------- dropfreq

def test_dropfreq_kept_positions_order():
    j1, j2 = dropfreq_kept_positions(3, 4)
    assert list(zip(j1, j2)) == [(0, 0), (0, 1), (1, 0), (0, 2)]


def test_dropfreq_keep_all_equals_dense_conv():
    rng = np.random.default_rng(5)
    m, n, d = 2, 2, 3
    layer = DropFreqConv(m, n, d, m * n * d * d, layer_seed=3)
    dense_filters = dct.idct2_batch(layer.plan, layer.frequency_tensor())
    x = rng.normal(size=(2, m, 5, 5))
    theirs = tc.conv2d_same(x, dense_filters, layer.bias)
    np.testing.assert_allclose(layer.forward(x), theirs, atol=1e-10)


def test_dropfreq_keep_one_gives_constant_filters():
    layer = DropFreqConv(2, 2, 5, 4, layer_seed=4)  # K=4 = m*n -> keep 1
    assert layer.keep == 1
    filters = layer.materialize()
    for l in range(2):
        for k in range(2):
            assert np.ptp(filters[l, k]) < 1e-12  # DC basis is flat


def test_dropfreq_budget_too_small():
    with pytest.raises(AllocationError):
        DropFreqConv(4, 4, 3, 15, layer_seed=0)  # fewer than one per filter


def test_dropfreq_gradients_only_on_kept_coefficients():
    layer = DropFreqConv(1, 1, 3, 3, layer_seed=6)
    x = np.random.default_rng(1).normal(size=(1, 1, 4, 4))
    layer.forward(x)
    layer.backward(np.ones((1, 1, 4, 4)))
    assert layer.coeffs_grad.shape == (1, 1, 3)
    assert np.isfinite(layer.coeffs_grad).all()


# ------------------------------------------------------------------- lrd

def test_lrd_full_rank_reproduces_filter_bank():
    rng = np.random.default_rng(7)
    m, n, d = 2, 3, 3
    filters = rng.normal(size=(n, m, d, d))
    r = min(m * d * d, n)
    layer = LrdConv(m, n, d, budget=r * (m * d * d + n), layer_seed=0,
                    init_filters=filters)
    np.testing.assert_allclose(layer.materialize(), filters, atol=1e-10)


def test_lrd_param_count_within_budget():
    budget = 100
    layer = LrdConv(2, 3, 3, budget, layer_seed=1)
    unit = 2 * 9 + 3
    assert layer.rank == budget // unit
    assert layer.weight_count == layer.rank * unit <= budget


def test_lrd_budget_too_small():
    with pytest.raises(AllocationError):
        LrdConv(2, 3, 3, 20, layer_seed=0)  # unit is 21


# -------------------------------------------------------------- dropfilt

def test_dropfilt_rate_one_is_identity():
    spec = fn.cifar_spec()
    assert dropfilt_spec(spec, 1.0) == spec


def test_dropfilt_sixteenth_matches_published_counts():
    shrunk = dropfilt_spec(fn.cifar_spec(), 1 / 16)
    conv_outs = [e.out_planes for e in shrunk.layers if e.kind == "conv"]
    assert conv_outs == [2, 4, 4, 8, 16]
    fc = shrunk.layers[-1]
    assert fc.in_planes == 16 * 4 * 4
    shrunk.validate()


def test_dropfilt_small_rate_floors_at_one_plane():
    shrunk = dropfilt_spec(fn.cifar_spec(), 1e-4)
    conv_outs = [e.out_planes for e in shrunk.layers if e.kind == "conv"]
    assert conv_outs == [1, 1, 1, 1, 1]
    shrunk.validate()


# ----------------------------------------- whole networks, all baselines

@pytest.mark.parametrize("method", ["hashed_spatial", "dropfreq", "lrd"])
def test_baseline_network_gradients(method):
    spec = fn.NetworkSpec(
        input_size=(4, 4),
        layers=(
            fn.LayerSpec("conv", 1, 2, 3, ("MP", "RL")),
            fn.LayerSpec("fc", 8, 10, ops=(),
                         compression_override={"rate": 0.5}),
        ),
    )
    rate = {"hashed_spatial": 8 / 18, "dropfreq": 0.5, "lrd": 14 / 18}[method]
    net = fn.build(spec, fn.Compression(method=method, rate=rate),
                   master_seed=1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 1, 4, 4))
    labels = rng.integers(0, 10, size=3)
    assert check_network_gradients(net, x, labels) < 1e-4
